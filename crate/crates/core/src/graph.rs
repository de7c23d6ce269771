//! Dataflow graph model: ops, tensor edges, validation and topological order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bytes per tensor element; every shape is assumed to hold 32-bit values.
pub const BYTES_PER_ELEMENT: u64 = 4;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate node id {0}")]
    DuplicateId(usize),
    #[error("node ids must be dense 0..{n}; id {id} is out of range")]
    SparseId { id: usize, n: usize },
    #[error("dangling edge #{index}: {src} -> {dst} references a missing node (graph has {n} nodes)")]
    DanglingEdge { index: usize, src: usize, dst: usize, n: usize },
    #[error("cycle detected through node {0}")]
    Cycle(usize),
    #[error("node {id}: {reason}")]
    InvalidNode { id: usize, reason: String },
    #[error("edge #{index}: {reason}")]
    InvalidEdge { index: usize, reason: String },
}

/// Fixed op vocabulary. `Other` absorbs every op name outside the list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpType {
    MatMul,
    Conv,
    Add,
    Mul,
    Reduce,
    Sigmoid,
    Relu,
    Softmax,
    Concat,
    Split,
    EmbedLookup,
    Other,
}

impl OpType {
    pub const ALL: [OpType; 12] = [
        OpType::MatMul,
        OpType::Conv,
        OpType::Add,
        OpType::Mul,
        OpType::Reduce,
        OpType::Sigmoid,
        OpType::Relu,
        OpType::Softmax,
        OpType::Concat,
        OpType::Split,
        OpType::EmbedLookup,
        OpType::Other,
    ];

    pub const COUNT: usize = Self::ALL.len();

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OpType::MatMul => "matmul",
            OpType::Conv => "conv",
            OpType::Add => "elementwise-add",
            OpType::Mul => "elementwise-mul",
            OpType::Reduce => "reduce",
            OpType::Sigmoid => "sigmoid",
            OpType::Relu => "relu",
            OpType::Softmax => "softmax",
            OpType::Concat => "concat",
            OpType::Split => "split",
            OpType::EmbedLookup => "embed-lookup",
            OpType::Other => "other",
        }
    }

    /// Whether the op may join a fused kernel: elementwise ops and reductions.
    pub fn is_fusible(self) -> bool {
        matches!(
            self,
            OpType::Add
                | OpType::Mul
                | OpType::Sigmoid
                | OpType::Relu
                | OpType::Softmax
                | OpType::Reduce
        )
    }
}

impl FromStr for OpType {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(OpType::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .unwrap_or(OpType::Other))
    }
}

impl fmt::Display for OpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpNode {
    pub id: usize,
    pub op: OpType,
    pub shape: Vec<u64>,
    pub flops: f64,
    pub out_bytes: f64,
    pub colocate: Option<String>,
}

impl OpNode {
    /// Node whose output bytes are derived from `shape`.
    pub fn with_shape(id: usize, op: OpType, shape: Vec<u64>, flops: f64) -> Self {
        let out_bytes = shape_bytes(&shape);
        Self { id, op, shape, flops, out_bytes, colocate: None }
    }

    /// Shapeless node with explicit costs.
    pub fn new(id: usize, op: OpType, flops: f64, out_bytes: f64) -> Self {
        Self { id, op, shape: Vec::new(), flops, out_bytes, colocate: None }
    }
}

pub fn shape_bytes(shape: &[u64]) -> f64 {
    (shape.iter().product::<u64>() * BYTES_PER_ELEMENT) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorEdge {
    pub src: usize,
    pub dst: usize,
    pub bytes: f64,
}

/// Validated DAG of ops. Node `i` always has id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputationGraph {
    name: String,
    nodes: Vec<OpNode>,
    edges: Vec<TensorEdge>,
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl ComputationGraph {
    /// Builds and validates a graph. Nodes may arrive in any order; they are
    /// stored sorted by id.
    pub fn new(
        name: impl Into<String>,
        mut nodes: Vec<OpNode>,
        edges: Vec<TensorEdge>,
    ) -> Result<Self, GraphError> {
        let n = nodes.len();
        let mut seen = vec![false; n];
        for node in &nodes {
            if node.id >= n {
                return Err(GraphError::SparseId { id: node.id, n });
            }
            if std::mem::replace(&mut seen[node.id], true) {
                return Err(GraphError::DuplicateId(node.id));
            }
        }
        nodes.sort_by_key(|node| node.id);
        for node in &nodes {
            validate_node(node)?;
        }

        let mut in_edges = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        for (index, e) in edges.iter().enumerate() {
            if e.src >= n || e.dst >= n {
                return Err(GraphError::DanglingEdge { index, src: e.src, dst: e.dst, n });
            }
            if !(e.bytes.is_finite() && e.bytes >= 0.0) {
                return Err(GraphError::InvalidEdge {
                    index,
                    reason: format!("bytes must be finite and non-negative, got {}", e.bytes),
                });
            }
            out_edges[e.src].push(index);
            in_edges[e.dst].push(index);
        }

        let topo = kahn(n, &edges, &in_edges, &out_edges)?;
        Ok(Self { name: name.into(), nodes, edges, in_edges, out_edges, topo })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &OpNode {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[TensorEdge] {
        &self.edges
    }

    /// Indices into [`edges`](Self::edges) of edges entering `id`.
    pub fn in_edges(&self, id: usize) -> &[usize] {
        &self.in_edges[id]
    }

    pub fn out_edges(&self, id: usize) -> &[usize] {
        &self.out_edges[id]
    }

    pub fn predecessors(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.in_edges[id].iter().map(move |&e| self.edges[e].src)
    }

    pub fn successors(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_edges[id].iter().map(move |&e| self.edges[e].dst)
    }

    pub fn in_degree(&self, id: usize) -> usize {
        self.in_edges[id].len()
    }

    pub fn out_degree(&self, id: usize) -> usize {
        self.out_edges[id].len()
    }

    /// Undirected neighbourhood (producers and consumers), sorted, without
    /// duplicates or the node itself.
    pub fn neighbors(&self, id: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .predecessors(id)
            .chain(self.successors(id))
            .filter(|&u| u != id)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Topological order with ties broken by ascending node id.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    /// Inverse of [`topo_order`](Self::topo_order): position of each node.
    pub fn topo_positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.len()];
        for (i, &v) in self.topo.iter().enumerate() {
            pos[v] = i;
        }
        pos
    }

    pub fn total_flops(&self) -> f64 {
        self.nodes.iter().map(|n| n.flops).sum()
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            name: self.name.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    op: n.op.name().to_owned(),
                    shape: n.shape.clone(),
                    flops: n.flops,
                    out_bytes: n.out_bytes,
                    colocate: n.colocate.clone(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord { src: e.src, dst: e.dst, bytes: Some(e.bytes) })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("graph serialisation cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
        file.into_graph()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json())
            .map_err(|source| GraphError::Io { path: path.display().to_string(), source })
    }
}

/// Reads and validates a graph file.
pub fn load_graph(path: impl AsRef<Path>) -> Result<ComputationGraph, GraphError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| GraphError::Io { path: path.display().to_string(), source })?;
    ComputationGraph::from_json(&text)
}

fn validate_node(node: &OpNode) -> Result<(), GraphError> {
    let bad = |reason: String| Err(GraphError::InvalidNode { id: node.id, reason });
    if !(node.flops.is_finite() && node.flops >= 0.0) {
        return bad(format!("flops must be finite and non-negative, got {}", node.flops));
    }
    if !(node.out_bytes.is_finite() && node.out_bytes >= 0.0) {
        return bad(format!("out_bytes must be finite and non-negative, got {}", node.out_bytes));
    }
    if node.shape.iter().any(|&d| d == 0) {
        return bad(format!("shape dims must be positive, got {:?}", node.shape));
    }
    if !node.shape.is_empty() {
        let expected = shape_bytes(&node.shape);
        if expected != node.out_bytes {
            return bad(format!(
                "out_bytes {} does not match shape {:?} ({} bytes)",
                node.out_bytes, node.shape, expected
            ));
        }
    }
    Ok(())
}

fn kahn(
    n: usize,
    edges: &[TensorEdge],
    in_edges: &[Vec<usize>],
    out_edges: &[Vec<usize>],
) -> Result<Vec<usize>, GraphError> {
    let mut indeg: Vec<usize> = in_edges.iter().map(Vec::len).collect();
    let mut heap: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&v| indeg[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = heap.pop() {
        order.push(v);
        for &e in &out_edges[v] {
            let w = edges[e].dst;
            indeg[w] -= 1;
            if indeg[w] == 0 {
                heap.push(Reverse(w));
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&v| indeg[v] > 0).expect("some node is left on a cycle");
        return Err(GraphError::Cycle(stuck));
    }
    Ok(order)
}

/// On-disk graph representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub name: String,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: usize,
    pub op: String,
    #[serde(default)]
    pub shape: Vec<u64>,
    pub flops: f64,
    pub out_bytes: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colocate: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub src: usize,
    pub dst: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<f64>,
}

impl GraphFile {
    pub fn into_graph(self) -> Result<ComputationGraph, GraphError> {
        let n = self.nodes.len();
        let mut out_bytes = vec![None; n];
        for rec in &self.nodes {
            if rec.id < n {
                out_bytes[rec.id] = Some(rec.out_bytes);
            }
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        for (index, rec) in self.edges.iter().enumerate() {
            let src_bytes = out_bytes.get(rec.src).copied().flatten();
            let bytes = match (rec.bytes, src_bytes) {
                (Some(b), _) => b,
                (None, Some(b)) => b,
                (None, None) => {
                    return Err(GraphError::DanglingEdge { index, src: rec.src, dst: rec.dst, n })
                }
            };
            edges.push(TensorEdge { src: rec.src, dst: rec.dst, bytes });
        }
        let nodes = self
            .nodes
            .into_iter()
            .map(|rec| OpNode {
                id: rec.id,
                op: rec.op.parse().unwrap_or(OpType::Other),
                shape: rec.shape,
                flops: rec.flops,
                out_bytes: rec.out_bytes,
                colocate: rec.colocate,
            })
            .collect();
        ComputationGraph::new(self.name, nodes, edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> ComputationGraph {
        let nodes = (0..n).map(|i| OpNode::new(i, OpType::Relu, 1.0, 4.0)).collect();
        let edges = (1..n).map(|i| TensorEdge { src: i - 1, dst: i, bytes: 4.0 }).collect();
        ComputationGraph::new("chain", nodes, edges).unwrap()
    }

    #[test]
    fn minimal_file_loads() {
        let text = r#"{"name":"g","nodes":[
            {"id":0,"op":"matmul","shape":[2,2],"flops":16,"out_bytes":16},
            {"id":1,"op":"relu","shape":[2,2],"flops":4,"out_bytes":16}],
            "edges":[{"src":0,"dst":1}]}"#;
        let g = ComputationGraph::from_json(text).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.edges()[0].bytes, 16.0);
        assert_eq!(g.node(0).op, OpType::MatMul);
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let text = r#"{"name":"g","nodes":[{"id":0,"op":"relu","flops":1,"out_bytes":4}],
            "edges":[{"src":0,"dst":0}]}"#;
        let err = ComputationGraph::from_json(text).unwrap_err();
        assert!(matches!(err, GraphError::Cycle(0)));
        assert!(err.to_string().contains("cycle detected"));
    }

    #[test]
    fn dangling_edge_rejected() {
        let text = r#"{"name":"g","nodes":[
            {"id":0,"op":"relu","flops":1,"out_bytes":4},
            {"id":1,"op":"relu","flops":1,"out_bytes":4}],
            "edges":[{"src":0,"dst":7}]}"#;
        let err = ComputationGraph::from_json(text).unwrap_err();
        assert!(err.to_string().contains("dangling edge"), "{err}");
    }

    #[test]
    fn duplicate_and_sparse_ids_rejected() {
        let dup = vec![OpNode::new(0, OpType::Add, 0.0, 0.0), OpNode::new(0, OpType::Add, 0.0, 0.0)];
        assert!(matches!(ComputationGraph::new("d", dup, vec![]), Err(GraphError::DuplicateId(0))));
        let sparse = vec![OpNode::new(0, OpType::Add, 0.0, 0.0), OpNode::new(5, OpType::Add, 0.0, 0.0)];
        assert!(matches!(
            ComputationGraph::new("s", sparse, vec![]),
            Err(GraphError::SparseId { id: 5, .. })
        ));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"name":"g","nodes":[],"edges":[],"extra":1}"#;
        assert!(matches!(ComputationGraph::from_json(text), Err(GraphError::Parse(_))));
        let text = r#"{"name":"g","nodes":[{"id":0,"op":"relu","flops":1,"out_bytes":4,"dtype":"f32"}],"edges":[]}"#;
        assert!(matches!(ComputationGraph::from_json(text), Err(GraphError::Parse(_))));
    }

    #[test]
    fn shape_must_match_bytes() {
        let node = OpNode { shape: vec![2, 3], ..OpNode::new(0, OpType::Add, 0.0, 20.0) };
        assert!(matches!(
            ComputationGraph::new("g", vec![node], vec![]),
            Err(GraphError::InvalidNode { id: 0, .. })
        ));
    }

    #[test]
    fn unknown_op_maps_to_other() {
        assert_eq!("FancyCustomOp".parse::<OpType>().unwrap(), OpType::Other);
        assert_eq!("softmax".parse::<OpType>().unwrap(), OpType::Softmax);
    }

    #[test]
    fn topo_examples() {
        assert_eq!(chain(3).topo_order(), &[0, 1, 2]);

        let nodes = (0..4).map(|i| OpNode::new(i, OpType::Add, 1.0, 4.0)).collect();
        let e = |s, d| TensorEdge { src: s, dst: d, bytes: 4.0 };
        let diamond =
            ComputationGraph::new("d", nodes, vec![e(0, 1), e(0, 2), e(1, 3), e(2, 3)]).unwrap();
        assert_eq!(diamond.topo_order(), &[0, 1, 2, 3]);

        let nodes = [2, 0, 1].iter().map(|&i| OpNode::new(i, OpType::Add, 1.0, 4.0)).collect();
        let free = ComputationGraph::new("f", nodes, vec![]).unwrap();
        assert_eq!(free.topo_order(), &[0, 1, 2]);
    }

    #[test]
    fn topo_breaks_ties_by_id_not_insertion() {
        let nodes = (0..3).map(|i| OpNode::new(i, OpType::Add, 1.0, 4.0)).collect();
        let g = ComputationGraph::new(
            "g",
            nodes,
            vec![TensorEdge { src: 2, dst: 0, bytes: 1.0 }],
        )
        .unwrap();
        assert_eq!(g.topo_order(), &[1, 2, 0]);
    }

    #[test]
    fn edge_override_survives_round_trip() {
        let text = r#"{"name":"g","nodes":[
            {"id":0,"op":"split","flops":1,"out_bytes":8,"colocate":"a"},
            {"id":1,"op":"relu","flops":1,"out_bytes":4}],
            "edges":[{"src":0,"dst":1,"bytes":4}]}"#;
        let g = ComputationGraph::from_json(text).unwrap();
        let again = ComputationGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(g, again);
        assert_eq!(again.edges()[0].bytes, 4.0);
        assert_eq!(again.node(0).colocate.as_deref(), Some("a"));
    }
}
