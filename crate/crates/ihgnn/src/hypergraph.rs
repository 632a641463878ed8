//! Hypergraph data model, admissibility validation, and assembly of the
//! normalized propagation operator
//! `M = D^{-1/2} H E B^{-1} H^T D^{-1/2}`.
//!
//! `H` is the binary node-by-hyperedge incidence matrix, `E = Diag(w)` the
//! hyperedge weights, `D = Diag(Hw)` the node degrees, and
//! `B = Diag(H^T 1)` the hyperedge degrees (cardinalities).

use crate::error::{Error, Result};
use crate::linalg::{spmm, DenseMatrix, SparseMatrix};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// A weighted hypergraph: `node_count` nodes and a list of hyperedges, each
/// a set of node indices with a nonnegative weight.
///
/// Construction normalizes the edge list: duplicate nodes within a hyperedge
/// are collapsed (incidence is binary), and hyperedges over the same node set
/// are merged with their weights summed.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    node_count: usize,
    edges: Vec<Hyperedge>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperedge {
    /// Sorted, deduplicated node indices.
    pub nodes: Vec<usize>,
    pub weight: f64,
}

/// Validation outcome; empty means admissible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdmissibilityReport {
    /// Hyperedge indices carrying a negative weight.
    pub negative_weight_edges: Vec<usize>,
    /// Nodes with zero weighted degree.
    pub zero_degree_nodes: Vec<usize>,
}

impl AdmissibilityReport {
    pub fn is_admissible(&self) -> bool {
        self.negative_weight_edges.is_empty() && self.zero_degree_nodes.is_empty()
    }
}

impl Hypergraph {
    /// Build from raw (nodes, weight) pairs. Empty hyperedges and out-of-range
    /// node indices are rejected; duplicates are normalized as documented on
    /// the type.
    pub fn new(node_count: usize, raw_edges: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (nodes, weight) in raw_edges {
            if nodes.is_empty() {
                return Err(Error::InvalidArgument("empty hyperedge".into()));
            }
            if !weight.is_finite() {
                return Err(Error::NonFinite("hyperedge weight".into()));
            }
            let mut nodes = nodes;
            nodes.sort_unstable();
            nodes.dedup();
            if let Some(&max) = nodes.last() {
                if max >= node_count {
                    return Err(Error::InvalidArgument(format!(
                        "node index {max} out of range for {node_count} nodes"
                    )));
                }
            }
            *merged.entry(nodes).or_insert(0.0) += weight;
        }
        let edges = merged
            .into_iter()
            .map(|(nodes, weight)| Hyperedge { nodes, weight })
            .collect();
        Ok(Hypergraph { node_count, edges })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Hyperedge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Weighted node degrees `D_ii = sum_j H_ij w_j`.
    pub fn node_degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.node_count];
        for e in &self.edges {
            for &i in &e.nodes {
                deg[i] += e.weight;
            }
        }
        deg
    }

    /// Insert a weight-1 singleton hyperedge for every zero-degree node.
    pub fn with_self_loops(&self) -> Result<Hypergraph> {
        let deg = self.node_degrees();
        let mut raw: Vec<(Vec<usize>, f64)> = self
            .edges
            .iter()
            .map(|e| (e.nodes.clone(), e.weight))
            .collect();
        for (i, d) in deg.iter().enumerate() {
            if *d <= 0.0 {
                raw.push((vec![i], 1.0));
            }
        }
        Hypergraph::new(self.node_count, raw)
    }

    /// Line-oriented serialization: one hyperedge per line,
    /// `weight node_id node_id ...`.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        for e in &self.edges {
            write!(out, "{}", e.weight)?;
            for n in &e.nodes {
                write!(out, " {n}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_from(node_count: usize, input: impl BufRead) -> Result<Hypergraph> {
        let mut raw = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let weight: f64 = parts
                .next()
                .unwrap()
                .parse()
                .map_err(|e| Error::Parse {
                    line: lineno + 1,
                    message: format!("bad weight: {e}"),
                })?;
            let nodes: Vec<usize> = parts
                .map(|p| {
                    p.parse().map_err(|e| Error::Parse {
                        line: lineno + 1,
                        message: format!("bad node id: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            if nodes.is_empty() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: "hyperedge has no nodes".into(),
                });
            }
            raw.push((nodes, weight));
        }
        Hypergraph::new(node_count, raw)
    }
}

/// Check the admissibility definition: every weight nonnegative and every
/// node with strictly positive weighted degree. Never fails; callers decide
/// what to do with a non-empty report.
pub fn validate_admissible(g: &Hypergraph) -> AdmissibilityReport {
    let mut report = AdmissibilityReport::default();
    for (j, e) in g.edges().iter().enumerate() {
        if e.weight < 0.0 {
            report.negative_weight_edges.push(j);
        }
    }
    for (i, d) in g.node_degrees().iter().enumerate() {
        if *d <= 0.0 {
            report.zero_degree_nodes.push(i);
        }
    }
    report
}

/// The normalized propagation operator together with the cached diagonals
/// of `D` (weighted node degrees) and `B` (hyperedge cardinalities).
#[derive(Debug, Clone)]
pub struct PropagationOperator {
    m: SparseMatrix,
    node_degrees: Vec<f64>,
    edge_degrees: Vec<usize>,
}

impl PropagationOperator {
    pub fn matrix(&self) -> &SparseMatrix {
        &self.m
    }

    pub fn node_count(&self) -> usize {
        self.m.rows()
    }

    pub fn node_degrees(&self) -> &[f64] {
        &self.node_degrees
    }

    pub fn edge_degrees(&self) -> &[usize] {
        &self.edge_degrees
    }
}

/// Assemble `M = D^{-1/2} H E B^{-1} H^T D^{-1/2}` for an admissible
/// hypergraph. Fails naming the first violation otherwise.
pub fn build_operator(g: &Hypergraph) -> Result<PropagationOperator> {
    let report = validate_admissible(g);
    if let Some(&j) = report.negative_weight_edges.first() {
        return Err(Error::Inadmissible(format!(
            "hyperedge {j} has negative weight {}",
            g.edges()[j].weight
        )));
    }
    if let Some(&i) = report.zero_degree_nodes.first() {
        return Err(Error::Inadmissible(format!("node {i} has zero degree")));
    }

    let deg = g.node_degrees();
    let inv_sqrt_deg: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();

    // M_{ik} = sum_e (w_e / |e|) * H_ie H_ke / sqrt(d_i d_k); accumulate
    // per hyperedge in a sorted map so assembly order is deterministic.
    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut edge_degrees = Vec::with_capacity(g.edge_count());
    for e in g.edges() {
        let card = e.nodes.len();
        edge_degrees.push(card);
        let scale = e.weight / card as f64;
        if scale == 0.0 {
            continue;
        }
        for &i in &e.nodes {
            for &k in &e.nodes {
                *entries.entry((i, k)).or_insert(0.0) +=
                    scale * inv_sqrt_deg[i] * inv_sqrt_deg[k];
            }
        }
    }
    let m = SparseMatrix::from_triplets(
        g.node_count(),
        g.node_count(),
        entries.into_iter().map(|((i, k), v)| (i, k, v)),
    )?;
    Ok(PropagationOperator {
        m,
        node_degrees: deg,
        edge_degrees,
    })
}

/// Maximum over rows of `|rowsum(P) - 1|` where `P = D^{-1/2} M D^{1/2}`
/// is the row-stochastic similarity transform of the operator.
pub fn row_stochastic_check(op: &PropagationOperator) -> f64 {
    let n = op.node_count();
    let mut max_dev: f64 = 0.0;
    for i in 0..n {
        let (cols, vals) = op.m.row(i);
        let mut rowsum = 0.0;
        for (&k, &v) in cols.iter().zip(vals) {
            // P_{ik} = M_{ik} * sqrt(d_k) / sqrt(d_i)
            rowsum += v * (op.node_degrees[k] / op.node_degrees[i]).sqrt();
        }
        max_dev = max_dev.max((rowsum - 1.0).abs());
    }
    max_dev
}

/// Dense evaluation of the operator formula, used as an independent oracle
/// by tests and by `verify`.
pub fn dense_operator_oracle(g: &Hypergraph) -> Result<DenseMatrix> {
    let n = g.node_count();
    let m = g.edge_count();
    let mut h = DenseMatrix::zeros(n, m);
    for (j, e) in g.edges().iter().enumerate() {
        for &i in &e.nodes {
            h.set(i, j, 1.0);
        }
    }
    let deg = g.node_degrees();
    let d_inv_sqrt = DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 / deg[i].sqrt()
        } else {
            0.0
        }
    });
    let eb = DenseMatrix::from_fn(m, m, |i, j| {
        if i == j {
            g.edges()[i].weight / g.edges()[i].nodes.len() as f64
        } else {
            0.0
        }
    });
    d_inv_sqrt
        .matmul(&h)?
        .matmul(&eb)?
        .matmul(&h.transpose())?
        .matmul(&d_inv_sqrt)
}

/// Sample a random admissible hypergraph with `n` nodes; every node is
/// guaranteed positive degree via a final covering hyperedge.
pub fn random_admissible(n: usize, edge_count: usize, rng: &mut impl rand::Rng) -> Hypergraph {
    let mut raw = Vec::with_capacity(edge_count + 1);
    for _ in 0..edge_count {
        let card = rng.gen_range(1..=(n.min(5)));
        let mut nodes: Vec<usize> = (0..card).map(|_| rng.gen_range(0..n)).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let weight = rng.gen_range(0.1..2.0);
        raw.push((nodes, weight));
    }
    // cover every node so the degree condition holds
    raw.push(((0..n).collect(), 1.0));
    Hypergraph::new(n, raw).unwrap()
}
