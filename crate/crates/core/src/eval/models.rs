//! Small supervised models over dense row-major design matrices.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 0.5,
            momentum: 0.9,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic regression trained by full-batch gradient descent
/// with heavy-ball momentum. The intercept is not penalized.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    width: usize,
    classes: usize,
    /// `classes x (width + 1)`, intercept last
    weights: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

impl LogisticRegression {
    pub fn fit(x: &[f64], width: usize, y: &[usize], classes: usize, opts: &LogisticOptions) -> Self {
        let n = y.len();
        let stride = width + 1;
        let mut weights = vec![0.0; classes * stride];
        if classes < 2 || n == 0 {
            return Self { width, classes, weights };
        }
        let mut velocity = vec![0.0; weights.len()];
        let mut grad = vec![0.0; weights.len()];
        let mut probs = vec![0.0; classes];
        for _ in 0..opts.iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for i in 0..n {
                let row = &x[i * width..(i + 1) * width];
                for k in 0..classes {
                    let w = &weights[k * stride..(k + 1) * stride];
                    probs[k] = w[width] + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                }
                softmax_in_place(&mut probs);
                for k in 0..classes {
                    let err = probs[k] - if y[i] == k { 1.0 } else { 0.0 };
                    let g = &mut grad[k * stride..(k + 1) * stride];
                    g.iter_mut().zip(row).for_each(|(g, a)| *g += err * a);
                    g[width] += err;
                }
            }
            for k in 0..classes {
                for j in 0..stride {
                    let idx = k * stride + j;
                    let penalty = if j < width { opts.l2 * weights[idx] } else { 0.0 };
                    let g = grad[idx] / n as f64 + penalty;
                    velocity[idx] = opts.momentum * velocity[idx] - opts.learning_rate * g;
                    weights[idx] += velocity[idx];
                }
            }
        }
        Self { width, classes, weights }
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let stride = self.width + 1;
        (0..self.classes)
            .map(|k| {
                let w = &self.weights[k * stride..(k + 1) * stride];
                w[self.width] + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
            })
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, s)| if s > best.1 { (k, s) } else { best })
            .0
    }
}

/// Ordinary least squares with an intercept, solved by SVD.
#[derive(Debug, Clone)]
pub struct LinearRegression {
    coef: DVector<f64>,
}

impl LinearRegression {
    pub fn fit(x: &[f64], width: usize, y: &[f64]) -> Self {
        let n = y.len();
        let design = DMatrix::from_fn(n, width + 1, |i, j| if j == width { 1.0 } else { x[i * width + j] });
        let target = DVector::from_column_slice(y);
        let coef = design
            .svd(true, true)
            .solve(&target, 1e-10)
            .unwrap_or_else(|_| DVector::zeros(width + 1));
        Self { coef }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let w = row.len();
        self.coef[w] + row.iter().zip(self.coef.iter()).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeOptions {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART tree: Gini impurity for classes, squared error for values. Leaves
/// hold the majority class or the mean.
#[derive(Debug, Clone)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

pub enum TreeTarget<'a> {
    Classes { labels: &'a [usize], classes: usize },
    Values(&'a [f64]),
}

impl TreeTarget<'_> {
    fn leaf(&self, rows: &[usize]) -> f64 {
        match self {
            TreeTarget::Classes { labels, classes } => {
                let mut counts = vec![0usize; *classes];
                rows.iter().for_each(|&r| counts[labels[r]] += 1);
                // ties go to the lowest class index
                counts
                    .iter()
                    .enumerate()
                    .fold((0, 0), |best, (k, &c)| if c > best.1 { (k, c) } else { best })
                    .0 as f64
            }
            TreeTarget::Values(v) => rows.iter().map(|&r| v[r]).sum::<f64>() / rows.len() as f64,
        }
    }

    /// Impurity times row count, so children sum comparably.
    fn cost_of(&self, stats: &Acc) -> f64 {
        match stats {
            Acc::Counts(c, n) => {
                let n = *n as f64;
                n - c.iter().map(|&k| (k * k) as f64).sum::<f64>() / n
            }
            Acc::Moments(s, s2, n) => s2 - s * s / *n as f64,
        }
    }

    fn empty(&self) -> Acc {
        match self {
            TreeTarget::Classes { classes, .. } => Acc::Counts(vec![0; *classes], 0),
            TreeTarget::Values(_) => Acc::Moments(0.0, 0.0, 0),
        }
    }

    fn add(&self, acc: &mut Acc, r: usize, sign: i64) {
        match (self, acc) {
            (TreeTarget::Classes { labels, .. }, Acc::Counts(c, n)) => {
                c[labels[r]] = (c[labels[r]] as i64 + sign) as usize;
                *n = (*n as i64 + sign) as usize;
            }
            (TreeTarget::Values(v), Acc::Moments(s, s2, n)) => {
                let x = v[r];
                *s += sign as f64 * x;
                *s2 += sign as f64 * x * x;
                *n = (*n as i64 + sign) as usize;
            }
            _ => unreachable!(),
        }
    }
}

#[derive(Debug, Clone)]
enum Acc {
    Counts(Vec<usize>, usize),
    Moments(f64, f64, usize),
}

impl DecisionTree {
    pub fn fit(x: &[f64], width: usize, target: &TreeTarget, opts: &TreeOptions) -> Self {
        let n = match target {
            TreeTarget::Classes { labels, .. } => labels.len(),
            TreeTarget::Values(v) => v.len(),
        };
        let mut tree = Self { nodes: Vec::new() };
        if n > 0 {
            let rows: Vec<usize> = (0..n).collect();
            tree.grow(x, width, target, opts, rows, 0);
        } else {
            tree.nodes.push(Node::Leaf(0.0));
        }
        tree
    }

    fn grow(&mut self, x: &[f64], width: usize, target: &TreeTarget, opts: &TreeOptions, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(target.leaf(&rows)));
        if depth >= opts.max_depth || rows.len() < 2 * opts.min_leaf.max(1) {
            return id;
        }
        let mut total = target.empty();
        rows.iter().for_each(|&r| target.add(&mut total, r, 1));
        let parent_cost = target.cost_of(&total);
        if parent_cost <= 1e-12 {
            return id;
        }

        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.clone();
        for f in 0..width {
            sorted.sort_by(|&a, &b| x[a * width + f].total_cmp(&x[b * width + f]));
            let mut left = target.empty();
            let mut right = total.clone();
            for i in 0..sorted.len() - 1 {
                target.add(&mut left, sorted[i], 1);
                target.add(&mut right, sorted[i], -1);
                let (xa, xb) = (x[sorted[i] * width + f], x[sorted[i + 1] * width + f]);
                if xa == xb || i + 1 < opts.min_leaf || sorted.len() - i - 1 < opts.min_leaf {
                    continue;
                }
                let cost = target.cost_of(&left) + target.cost_of(&right);
                if best.is_none_or(|b| cost < b.0 - 1e-12) {
                    best = Some((cost, f, 0.5 * (xa + xb)));
                }
            }
        }
        let Some((cost, feature, threshold)) = best else {
            return id;
        };
        if cost >= parent_cost - 1e-12 {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| x[i * width + feature] <= threshold);
        let left = self.grow(x, width, target, opts, l, depth + 1);
        let right = self.grow(x, width, target, opts, r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}
