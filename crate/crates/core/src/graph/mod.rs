//! Feature dependency graphs: annotation parsing, the artificial root,
//! cycle breaking, and the sampling order.
//!
//! An edge `a -> b` means feature `a` constrains the admissible values of
//! feature `b`, so `b` is sampled after `a` and conditioned on it. The
//! artificial root parents every feature that has no other parent; it is
//! never part of a parent set handed to a sampler.

mod fas;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::table::{hex_digest, Schema};

pub use fas::{min_feedback_arc_set_indexed, MAX_EDGES};

/// Display name of the artificial root in reports.
pub const ROOT: &str = "<root>";

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("dependency text is empty")]
    EmptyText,
    #[error("line {line}: unknown feature `{name}`")]
    UnknownFeature { line: usize, name: String },
    #[error("line {line}: malformed line: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: edge `{source_name}->{target}` does not point at `{head}`")]
    TargetMismatch {
        line: usize,
        head: String,
        source_name: String,
        target: String,
    },
    #[error("line {line}: self-loop on `{name}`")]
    SelfLoop { line: usize, name: String },
    #[error("graph has {count} edges, more than the solver limit of {limit}")]
    TooManyEdges { count: usize, limit: usize },
    #[error("graph contains a cycle through {0:?}")]
    Cycle(Vec<String>),
    #[error("graph has no artificial root; finalize it first")]
    MissingRoot,
}

pub type Edge = (String, String);

/// Directed dependency graph over a schema's features, optionally rooted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DependencyGraph {
    features: Vec<String>,
    edges: BTreeSet<Edge>,
    root_edges: BTreeSet<String>,
    has_root: bool,
    removed: BTreeSet<Edge>,
    provenance: String,
}

impl PartialEq for DependencyGraph {
    /// Graphs are equal when they relate the same features the same way.
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features && self.edges == other.edges
    }
}

impl DependencyGraph {
    pub fn new(features: Vec<String>) -> Self {
        Self {
            features,
            edges: BTreeSet::new(),
            root_edges: BTreeSet::new(),
            has_root: false,
            removed: BTreeSet::new(),
            provenance: String::new(),
        }
    }

    pub fn from_schema(schema: &Schema) -> Self {
        Self::new(schema.names().map(str::to_string).collect())
    }

    /// Builds a graph from `(parent, child)` name pairs. Unknown names and
    /// self-loops are rejected.
    pub fn with_edges<'a>(
        features: Vec<String>,
        edges: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, GraphError> {
        let mut g = Self::new(features);
        for (p, c) in edges {
            g.add_edge(p, c, 0)?;
        }
        Ok(g)
    }

    fn add_edge(&mut self, parent: &str, child: &str, line: usize) -> Result<(), GraphError> {
        for name in [parent, child] {
            if !self.contains(name) {
                return Err(GraphError::UnknownFeature {
                    line,
                    name: name.to_string(),
                });
            }
        }
        if parent == child {
            return Err(GraphError::SelfLoop {
                line,
                name: parent.to_string(),
            });
        }
        self.edges.insert((parent.to_string(), child.to_string()));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.features.iter().any(|f| f == name)
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    /// Feature-to-feature edges (root edges excluded), in lexicographic order.
    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn root_edges(&self) -> &BTreeSet<String> {
        &self.root_edges
    }

    pub fn has_root(&self) -> bool {
        self.has_root
    }

    /// Edges deleted by cycle breaking.
    pub fn removed_edges(&self) -> &BTreeSet<Edge> {
        &self.removed
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn set_provenance(&mut self, provenance: impl Into<String>) {
        self.provenance = provenance.into();
    }

    /// Feature parents (root excluded), in feature order.
    pub fn parents(&self, child: &str) -> Vec<&str> {
        self.features
            .iter()
            .filter(|p| self.edges.contains(&((*p).clone(), child.to_string())))
            .map(String::as_str)
            .collect()
    }

    fn in_degree(&self, child: &str) -> usize {
        self.edges.iter().filter(|(_, c)| c == child).count()
            + usize::from(self.root_edges.contains(child))
    }

    /// Adds the root and connects it to every feature with no incoming edge.
    /// Calling it again only connects features orphaned since.
    pub fn add_root(mut self) -> Self {
        self.has_root = true;
        let orphans: Vec<String> = self
            .features
            .iter()
            .filter(|f| self.in_degree(f) == 0)
            .cloned()
            .collect();
        self.root_edges.extend(orphans);
        self
    }

    fn sorted_indexed(&self) -> (Vec<&str>, Vec<(usize, usize)>, Vec<&Edge>) {
        let mut names: Vec<&str> = self.features.iter().map(String::as_str).collect();
        names.sort_unstable();
        let pos: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        // BTreeSet order is lexicographic (parent, child)
        let edge_refs: Vec<&Edge> = self.edges.iter().collect();
        let indexed = edge_refs
            .iter()
            .map(|(p, c)| (pos[p.as_str()], pos[c.as_str()]))
            .collect();
        (names, indexed, edge_refs)
    }

    /// Some directed cycle, as a node list, or `None` if the graph is acyclic.
    /// The search visits nodes and children in lexicographic order.
    pub fn find_cycle(&self) -> Option<Vec<String>> {
        let (names, indexed, _) = self.sorted_indexed();
        let removed = vec![false; indexed.len()];
        fas::find_cycle(names.len(), &indexed, &removed).map(|cycle_edges| {
            cycle_edges
                .iter()
                .map(|&e| names[indexed[e].0].to_string())
                .collect()
        })
    }

    /// A minimum-cardinality set of feature edges whose removal leaves the
    /// graph acyclic. Root edges are never candidates.
    pub fn min_feedback_arc_set(&self) -> Result<BTreeSet<Edge>, GraphError> {
        if self.edges.len() > MAX_EDGES {
            return Err(GraphError::TooManyEdges {
                count: self.edges.len(),
                limit: MAX_EDGES,
            });
        }
        let (names, indexed, edge_refs) = self.sorted_indexed();
        let picked = min_feedback_arc_set_indexed(names.len(), &indexed)?;
        Ok(picked.into_iter().map(|e| edge_refs[e].clone()).collect())
    }

    /// Root, cycle breaking, and re-rooting of features orphaned by the
    /// removals. The result is acyclic and every feature has a parent.
    pub fn finalize(self) -> Result<Self, GraphError> {
        let mut g = self.add_root();
        let cut = g.min_feedback_arc_set()?;
        for e in &cut {
            g.edges.remove(e);
        }
        g.removed.extend(cut);
        Ok(g.add_root())
    }

    /// Kahn order from the root's children, lexicographic among ready nodes.
    pub fn topo_order(&self) -> Result<TopoOrder, GraphError> {
        if !self.has_root {
            return Err(GraphError::MissingRoot);
        }
        let mut indeg: BTreeMap<&str, usize> = self
            .features
            .iter()
            .map(|f| (f.as_str(), 0usize))
            .collect();
        for (_, c) in &self.edges {
            *indeg.get_mut(c.as_str()).unwrap() += 1;
        }
        let mut ready: BTreeSet<&str> = indeg
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(n, _)| *n)
            .collect();
        let mut ordering = Vec::with_capacity(self.features.len());
        while let Some(next) = ready.pop_first() {
            ordering.push(next.to_string());
            for (p, c) in &self.edges {
                if p == next {
                    let d = indeg.get_mut(c.as_str()).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(c.as_str());
                    }
                }
            }
        }
        if ordering.len() < self.features.len() {
            return Err(GraphError::Cycle(self.find_cycle().unwrap_or_default()));
        }
        let parent_sets = ordering
            .iter()
            .map(|f| self.parents(f).into_iter().map(str::to_string).collect())
            .collect();
        Ok(TopoOrder {
            ordering,
            parent_sets,
        })
    }

    /// The annotation text format: one `Name: [P->Name, ...]` line per
    /// feature, in feature order, parents in feature order. Root edges are
    /// implicit (empty brackets).
    pub fn to_annotation_text(&self) -> String {
        let mut out = String::new();
        for f in &self.features {
            let parents = self.parents(f);
            let items: Vec<String> = parents.iter().map(|p| format!("{p}->{f}")).collect();
            let _ = writeln!(out, "{f}: [{}]", items.join(", "));
        }
        out
    }

    /// Annotation text preceded by `#` comment lines recording provenance
    /// and removed edges.
    pub fn to_annotated_file(&self) -> String {
        let mut out = String::new();
        if !self.provenance.is_empty() {
            for line in self.provenance.lines() {
                let _ = writeln!(out, "# provenance: {line}");
            }
        }
        for (p, c) in &self.removed {
            let _ = writeln!(out, "# removed: {p}->{c}");
        }
        out.push_str(&self.to_annotation_text());
        out
    }

    /// Digest of the canonical annotation text.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_annotation_text().as_bytes());
        hex_digest(h)
    }
}

/// Sampling schedule: every feature after all of its parents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopoOrder {
    ordering: Vec<String>,
    parent_sets: Vec<Vec<String>>,
}

impl TopoOrder {
    pub fn ordering(&self) -> &[String] {
        &self.ordering
    }

    /// Conditioning set for the feature at `position` in the ordering.
    pub fn parents_at(&self, position: usize) -> &[String] {
        &self.parent_sets[position]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.ordering
            .iter()
            .zip(&self.parent_sets)
            .map(|(f, p)| (f.as_str(), p.as_slice()))
    }

    pub fn parents_of(&self, feature: &str) -> Option<&[String]> {
        self.ordering
            .iter()
            .position(|f| f == feature)
            .map(|i| self.parent_sets[i].as_slice())
    }

    /// Digest of the ordering and every parent set.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (f, parents) in self.iter() {
            h.update(f.as_bytes());
            h.update(b":");
            h.update(parents.join(",").as_bytes());
            h.update(b"\n");
        }
        hex_digest(h)
    }

    /// Same ordering, conditioning on every ancestor instead of the parents.
    /// Ancestors are listed in sampling order.
    pub fn with_ancestors(&self) -> TopoOrder {
        let mut closures: Vec<BTreeSet<usize>> = Vec::with_capacity(self.ordering.len());
        let pos: BTreeMap<&str, usize> = self
            .ordering
            .iter()
            .enumerate()
            .map(|(i, f)| (f.as_str(), i))
            .collect();
        for parents in &self.parent_sets {
            let mut set = BTreeSet::new();
            for p in parents {
                let i = pos[p.as_str()];
                set.insert(i);
                set.extend(closures[i].iter().copied());
            }
            closures.push(set);
        }
        TopoOrder {
            ordering: self.ordering.clone(),
            parent_sets: closures
                .into_iter()
                .map(|s| s.into_iter().map(|i| self.ordering[i].clone()).collect())
                .collect(),
        }
    }
}

/// Parses annotation text such as `Feature A: [Feature B->Feature A]`.
///
/// Blank lines and `#` comments are skipped. A feature with empty brackets,
/// nothing after the colon, or no line at all gets no parents. Repeated
/// lines for one feature accumulate.
pub fn parse_dependency_text(text: &str, schema: &Schema) -> Result<DependencyGraph, GraphError> {
    parse_for_features(text, schema.names().map(str::to_string).collect())
}

pub fn parse_for_features(text: &str, features: Vec<String>) -> Result<DependencyGraph, GraphError> {
    if text.trim().is_empty() {
        return Err(GraphError::EmptyText);
    }
    let mut g = DependencyGraph::new(features);
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| GraphError::Malformed {
            line: line_no,
            reason: reason.to_string(),
        };
        let (head, body) = match line.find('[') {
            Some(open) => {
                let head = line[..open].trim_end();
                let head = head.strip_suffix(':').ok_or_else(|| malformed("missing `:` before `[`"))?;
                (head.trim(), &line[open..])
            }
            None => {
                let head = line.strip_suffix(':').ok_or_else(|| malformed("missing `:`"))?;
                (head.trim(), "")
            }
        };
        if head.is_empty() {
            return Err(malformed("empty feature name"));
        }
        if !g.contains(head) {
            return Err(GraphError::UnknownFeature {
                line: line_no,
                name: head.to_string(),
            });
        }
        if body.is_empty() {
            continue;
        }
        let inner = body
            .strip_prefix('[')
            .and_then(|b| b.strip_suffix(']'))
            .ok_or_else(|| malformed("unbalanced brackets"))?;
        if inner.contains('[') || inner.contains(']') {
            return Err(malformed("unbalanced brackets"));
        }
        for item in inner.split(',') {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            let (src, dst) = item
                .split_once("->")
                .ok_or_else(|| malformed("constraint without `->`"))?;
            let (src, dst) = (src.trim(), dst.trim());
            if dst != head {
                return Err(GraphError::TargetMismatch {
                    line: line_no,
                    head: head.to_string(),
                    source_name: src.to_string(),
                    target: dst.to_string(),
                });
            }
            g.add_edge(src, dst, line_no)?;
        }
    }
    Ok(g)
}
