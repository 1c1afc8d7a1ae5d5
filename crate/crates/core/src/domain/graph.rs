use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "PC")]
    Pc,
    #[serde(rename = "GES")]
    Ges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub src: String,
    pub dst: String,
    pub directed: bool,
    /// CI statistic (PC) or score gain (GES).
    pub stat: f64,
}

/// Learned causal structure over named variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<GraphEdge>,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub constrained: bool,
}

impl CausalGraph {
    pub fn empty(nodes: Vec<String>, algorithm: Algorithm) -> Self {
        Self { nodes, edges: Vec::new(), algorithm, constrained: true }
    }

    pub fn contains(&self, node: &str) -> bool {
        self.nodes.iter().any(|n| n == node)
    }

    pub fn directed_edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.edges.iter().filter(|e| e.directed)
    }

    pub fn has_undirected(&self) -> bool {
        self.edges.iter().any(|e| !e.directed)
    }

    pub fn has_edge(&self, src: &str, dst: &str) -> bool {
        self.directed_edges().any(|e| e.src == src && e.dst == dst)
    }

    pub fn parents(&self, node: &str) -> Vec<&str> {
        self.directed_edges().filter(|e| e.dst == node).map(|e| e.src.as_str()).collect()
    }

    pub fn children(&self, node: &str) -> Vec<&str> {
        self.directed_edges().filter(|e| e.src == node).map(|e| e.dst.as_str()).collect()
    }

    pub fn ancestors(&self, node: &str) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = self.parents(node);
        while let Some(n) = stack.pop() {
            if seen.insert(String::from(n)) {
                stack.extend(self.parents(n));
            }
        }
        seen
    }

    /// Directed subgraph acyclicity via Kahn's algorithm.
    pub fn is_acyclic(&self) -> bool {
        let mut indeg: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for e in self.directed_edges() {
            *indeg.entry(e.dst.as_str()).or_default() += 1;
            indeg.entry(e.src.as_str()).or_default();
        }
        let mut ready: Vec<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut visited = 0;
        while let Some(n) = ready.pop() {
            visited += 1;
            for e in self.directed_edges().filter(|e| e.src == n) {
                let d = indeg.get_mut(e.dst.as_str()).expect("node registered");
                *d -= 1;
                if *d == 0 {
                    ready.push(e.dst.as_str());
                }
            }
        }
        visited == indeg.len()
    }

    /// Directed `(src, dst)` pairs.
    pub fn edge_set(&self) -> BTreeSet<(String, String)> {
        self.directed_edges().map(|e| (e.src.clone(), e.dst.clone())).collect()
    }

    /// Copy without the directed edge `src -> dst`.
    pub fn without_edge(&self, src: &str, dst: &str) -> CausalGraph {
        let mut g = self.clone();
        g.edges.retain(|e| !(e.src == src && e.dst == dst));
        g
    }

    /// Line format `src -> dst [stat]`; undirected edges use `--`.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let arrow = if e.directed { "->" } else { "--" };
            let _ = writeln!(out, "{} {} {} [{:.4}]", e.src, arrow, e.dst, e.stat);
        }
        out
    }
}
