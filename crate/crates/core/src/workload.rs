//! Synthetic workload generators.
//!
//! Each family reproduces the dependency structure of a well-known model
//! family at a configurable size: recurrent grids, encoder/decoder grids with
//! attention, segment-recurrent attention stacks, multi-branch convolution
//! blocks, stacked cells with skip inputs and gated dilated-convolution stacks.
//! Node and edge counts are closed-form functions of the size parameters; the
//! seed only jitters per-op flop counts.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ComputationGraph, OpNode, OpType, TensorEdge};

pub const DEFAULT_NODE_CAP: usize = 10_000;

/// Rows of the activation matrices (batch x sequence, folded).
const TOKENS: u64 = 64;
/// Spatial positions x batch of the convolutional families.
const PIXELS: u64 = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("size parameters must be positive: {0}")]
    BadParams(String),
    #[error("workload would have {nodes} nodes, above the cap of {cap}")]
    SizeCap { nodes: usize, cap: usize },
    #[error("unknown workload family {0:?}")]
    UnknownFamily(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "grid-rnn")]
    GridRnn,
    #[serde(rename = "enc-dec-rnn")]
    EncDecRnn,
    #[serde(rename = "attention-stack")]
    AttentionStack,
    #[serde(rename = "multi-branch-cnn")]
    MultiBranchCnn,
    #[serde(rename = "cell-stack-cnn")]
    CellStackCnn,
    #[serde(rename = "dilated-stack")]
    DilatedStack,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::GridRnn,
        Family::EncDecRnn,
        Family::AttentionStack,
        Family::MultiBranchCnn,
        Family::CellStackCnn,
        Family::DilatedStack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::GridRnn => "grid-rnn",
            Family::EncDecRnn => "enc-dec-rnn",
            Family::AttentionStack => "attention-stack",
            Family::MultiBranchCnn => "multi-branch-cnn",
            Family::CellStackCnn => "cell-stack-cnn",
            Family::DilatedStack => "dilated-stack",
        }
    }

    /// Primitive ops emitted per repeated unit (cell, block, branch, layer).
    pub fn ops_per_unit(self) -> usize {
        match self {
            Family::GridRnn | Family::EncDecRnn => 4,
            Family::AttentionStack => 12,
            Family::MultiBranchCnn => 4,
            Family::CellStackCnn => 2,
            Family::DilatedStack => 7,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| WorkloadError::UnknownFamily(s.to_owned()))
    }
}

/// Size parameters. `steps` is the secondary dimension: time steps for the
/// recurrent families, segments for the attention stack, branches per block
/// for the convolutional families and stacks for the dilated family.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub family: Family,
    pub layers: usize,
    pub steps: usize,
    #[serde(default = "default_width")]
    pub width: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_width() -> u64 {
    256
}

impl WorkloadSpec {
    pub fn new(family: Family, layers: usize, steps: usize, width: u64, seed: u64) -> Self {
        Self { family, layers, steps, width, seed }
    }

    pub fn label(&self) -> String {
        format!(
            "{}-l{}-s{}-w{}-seed{}",
            self.family, self.layers, self.steps, self.width, self.seed
        )
    }

    /// Closed-form node count.
    pub fn node_count(&self) -> usize {
        let (l, s) = (self.layers, self.steps);
        match self.family {
            Family::GridRnn => 4 * l * s,
            Family::EncDecRnn => 8 * l * s + 3 * s,
            Family::AttentionStack => s + 12 * l * s,
            Family::MultiBranchCnn => 1 + l * (4 * s + 1),
            Family::CellStackCnn => 1 + l * (2 * s + 1),
            Family::DilatedStack => 5 + 7 * l * s,
        }
    }

    /// Closed-form edge count.
    pub fn edge_count(&self) -> usize {
        let (l, s) = (self.layers, self.steps);
        let grid = 3 * l * s + (l - 1) * s + l * (s - 1);
        match self.family {
            Family::GridRnn => grid,
            Family::EncDecRnn => 2 * grid + s * s + 4 * s,
            Family::AttentionStack => 16 * l * s + 2 * l * (s - 1),
            Family::MultiBranchCnn => 5 * s * l,
            Family::CellStackCnn => 3 * s * l,
            Family::DilatedStack => 10 * s * l + 3,
        }
    }
}

/// Generates a workload with the default node cap.
pub fn gen_workload(spec: &WorkloadSpec) -> Result<ComputationGraph, WorkloadError> {
    gen_workload_capped(spec, DEFAULT_NODE_CAP)
}

pub fn gen_workload_capped(
    spec: &WorkloadSpec,
    cap: usize,
) -> Result<ComputationGraph, WorkloadError> {
    if spec.layers == 0 || spec.steps == 0 || spec.width == 0 {
        return Err(WorkloadError::BadParams(format!(
            "layers={} steps={} width={}",
            spec.layers, spec.steps, spec.width
        )));
    }
    let nodes = spec.node_count();
    if nodes > cap {
        return Err(WorkloadError::SizeCap { nodes, cap });
    }
    let mut b = Builder::new(spec.seed, spec.width);
    match spec.family {
        Family::GridRnn => {
            b.rnn_grid(spec.layers, spec.steps);
        }
        Family::EncDecRnn => enc_dec(&mut b, spec.layers, spec.steps),
        Family::AttentionStack => attention_stack(&mut b, spec.layers, spec.steps),
        Family::MultiBranchCnn => multi_branch(&mut b, spec.layers, spec.steps),
        Family::CellStackCnn => cell_stack(&mut b, spec.layers, spec.steps),
        Family::DilatedStack => dilated(&mut b, spec.layers, spec.steps),
    }
    assert_eq!(b.nodes.len(), spec.node_count(), "node formula for {}", spec.family);
    assert_eq!(b.edges.len(), spec.edge_count(), "edge formula for {}", spec.family);
    Ok(ComputationGraph::new(spec.label(), b.nodes, b.edges)
        .expect("generators only emit forward edges"))
}

struct Builder {
    rng: ChaCha8Rng,
    w: u64,
    nodes: Vec<OpNode>,
    edges: Vec<TensorEdge>,
}

impl Builder {
    fn new(seed: u64, w: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), w, nodes: Vec::new(), edges: Vec::new() }
    }

    fn op(&mut self, op: OpType, shape: Vec<u64>, flops: f64, inputs: &[usize]) -> usize {
        let id = self.nodes.len();
        let jitter = self.rng.gen_range(0.8..1.2);
        self.nodes.push(OpNode::with_shape(id, op, shape, (flops * jitter).round()));
        for &src in inputs {
            let bytes = self.nodes[src].out_bytes;
            self.edges.push(TensorEdge { src, dst: id, bytes });
        }
        id
    }

    /// One recurrent cell: gate matmul, bias add, sigmoid gate, output product.
    fn rnn_cell(&mut self, inputs: &[usize]) -> usize {
        let w = self.w;
        let gates = self.op(OpType::MatMul, vec![TOKENS, 4 * w], (2 * TOKENS * 2 * w * 4 * w) as f64, inputs);
        let biased = self.op(OpType::Add, vec![TOKENS, 4 * w], (TOKENS * 4 * w) as f64, &[gates]);
        let gate = self.op(OpType::Sigmoid, vec![TOKENS, 4 * w], (4 * TOKENS * 4 * w) as f64, &[biased]);
        self.op(OpType::Mul, vec![TOKENS, w], (TOKENS * 4 * w) as f64, &[gate])
    }

    /// Grid of cells; cell (l, s) reads (l-1, s) and (l, s-1).
    fn rnn_grid(&mut self, layers: usize, steps: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![0; steps]; layers];
        for l in 0..layers {
            for s in 0..steps {
                let mut inputs = Vec::new();
                if l > 0 {
                    inputs.push(out[l - 1][s]);
                }
                if s > 0 {
                    inputs.push(out[l][s - 1]);
                }
                out[l][s] = self.rnn_cell(&inputs);
            }
        }
        out
    }
}

fn enc_dec(b: &mut Builder, layers: usize, steps: usize) {
    let w = b.w;
    let enc = b.rnn_grid(layers, steps);
    let enc_tops: Vec<usize> = enc[layers - 1].clone();
    // The decoder is generated step-major so attention context of step s can
    // feed decoder step s + 1.
    let mut dec = vec![vec![0; steps]; layers];
    let mut context: Option<usize> = None;
    for s in 0..steps {
        for l in 0..layers {
            let mut inputs = Vec::new();
            if l > 0 {
                inputs.push(dec[l - 1][s]);
            }
            if s > 0 {
                inputs.push(dec[l][s - 1]);
            }
            if l == 0 {
                match context {
                    Some(c) => inputs.push(c),
                    None => inputs.push(enc_tops[steps - 1]),
                }
            }
            dec[l][s] = b.rnn_cell(&inputs);
        }
        let mut score_in = enc_tops.clone();
        score_in.push(dec[layers - 1][s]);
        let len = steps as u64;
        let score = b.op(OpType::MatMul, vec![TOKENS, len], (2 * TOKENS * len * w) as f64, &score_in);
        let probs = b.op(OpType::Softmax, vec![TOKENS, len], (5 * TOKENS * len) as f64, &[score]);
        let ctx = b.op(OpType::MatMul, vec![TOKENS, w], (2 * TOKENS * len * w) as f64, &[probs]);
        context = (s + 1 < steps).then_some(ctx);
    }
}

fn attention_stack(b: &mut Builder, layers: usize, segments: usize) {
    let w = b.w;
    let t = TOKENS;
    let mm = |k: u64, n: u64| (2 * t * k * n) as f64;
    let mut inputs: Vec<usize> = (0..segments)
        .map(|_| b.op(OpType::EmbedLookup, vec![t, w], (t * w) as f64, &[]))
        .collect();
    for _ in 0..layers {
        let mut outputs = Vec::with_capacity(segments);
        for s in 0..segments {
            let x = inputs[s];
            let mut kv_in = vec![x];
            if s > 0 {
                kv_in.push(inputs[s - 1]);
            }
            let q = b.op(OpType::MatMul, vec![t, w], mm(w, w), &[x]);
            let k = b.op(OpType::MatMul, vec![t, w], mm(w, w), &kv_in);
            let v = b.op(OpType::MatMul, vec![t, w], mm(w, w), &kv_in);
            let score = b.op(OpType::MatMul, vec![t, 2 * t], mm(w, 2 * t), &[q, k]);
            let probs = b.op(OpType::Softmax, vec![t, 2 * t], (5 * t * 2 * t) as f64, &[score]);
            let ctx = b.op(OpType::MatMul, vec![t, w], mm(2 * t, w), &[probs, v]);
            let proj = b.op(OpType::MatMul, vec![t, w], mm(w, w), &[ctx]);
            let res1 = b.op(OpType::Add, vec![t, w], (t * w) as f64, &[proj, x]);
            let ff1 = b.op(OpType::MatMul, vec![t, 4 * w], mm(w, 4 * w), &[res1]);
            let act = b.op(OpType::Relu, vec![t, 4 * w], (t * 4 * w) as f64, &[ff1]);
            let ff2 = b.op(OpType::MatMul, vec![t, w], mm(4 * w, w), &[act]);
            outputs.push(b.op(OpType::Add, vec![t, w], (t * w) as f64, &[ff2, res1]));
        }
        inputs = outputs;
    }
}

fn conv_flops(c_in: u64, c_out: u64, kernel: u64) -> f64 {
    (2 * PIXELS * c_in * c_out * kernel * kernel) as f64
}

fn multi_branch(b: &mut Builder, blocks: usize, branches: usize) {
    let w = b.w;
    let map = |c: u64| vec![PIXELS, c];
    let mut x = b.op(OpType::Conv, map(w), conv_flops(3, w, 3), &[]);
    let mut channels = w;
    for _ in 0..blocks {
        let mut tails = Vec::with_capacity(branches);
        for branch in 0..branches {
            // Branch kernels cycle through 1x1, 3x3 and 5x5.
            let kernel = 1 + 2 * (branch as u64 % 3);
            let c1 = b.op(OpType::Conv, map(w), conv_flops(channels, w, 1), &[x]);
            let r1 = b.op(OpType::Relu, map(w), (PIXELS * w) as f64, &[c1]);
            let c2 = b.op(OpType::Conv, map(w), conv_flops(w, w, kernel), &[r1]);
            tails.push(b.op(OpType::Relu, map(w), (PIXELS * w) as f64, &[c2]));
        }
        channels = w * branches as u64;
        x = b.op(OpType::Concat, map(channels), 0.0, &tails);
    }
}

fn cell_stack(b: &mut Builder, cells: usize, branches: usize) {
    let w = b.w;
    let map = |c: u64| vec![PIXELS, c];
    let stem = b.op(OpType::Conv, map(w), conv_flops(3, w, 3), &[]);
    let (mut prev, mut prev_prev) = (stem, stem);
    let mut channels = (w, w);
    for _ in 0..cells {
        let mut tails = Vec::with_capacity(branches);
        for branch in 0..branches {
            let (input, c_in) =
                if branch % 2 == 0 { (prev, channels.0) } else { (prev_prev, channels.1) };
            let kernel = if branch % 3 == 2 { 1 } else { 3 };
            let conv = b.op(OpType::Conv, map(w), conv_flops(c_in, w, kernel), &[input]);
            tails.push(b.op(OpType::Relu, map(w), (PIXELS * w) as f64, &[conv]));
        }
        let out_c = w * branches as u64;
        let out = b.op(OpType::Concat, map(out_c), 0.0, &tails);
        prev_prev = prev;
        prev = out;
        channels = (out_c, channels.0);
    }
}

fn dilated(b: &mut Builder, layers: usize, stacks: usize) {
    let w = b.w;
    let t = TOKENS * 4;
    let act = |c: u64| vec![t, c];
    let mut x = b.op(OpType::EmbedLookup, act(w), (t * w) as f64, &[]);
    let mut skips = Vec::with_capacity(layers * stacks);
    for _ in 0..stacks {
        for _ in 0..layers {
            let filt = b.op(OpType::Conv, act(w), (2 * t * w * w * 2) as f64, &[x]);
            let gate = b.op(OpType::Conv, act(w), (2 * t * w * w * 2) as f64, &[x]);
            let f = b.op(OpType::Relu, act(w), (t * w) as f64, &[filt]);
            let g = b.op(OpType::Sigmoid, act(w), (4 * t * w) as f64, &[gate]);
            let z = b.op(OpType::Mul, act(w), (t * w) as f64, &[f, g]);
            let proj = b.op(OpType::MatMul, act(w), (2 * t * w * w) as f64, &[z]);
            skips.push(proj);
            x = b.op(OpType::Add, act(w), (t * w) as f64, &[proj, x]);
        }
    }
    let sum = b.op(OpType::Add, act(w), (t * w * skips.len() as u64) as f64, &skips);
    let r = b.op(OpType::Relu, act(w), (t * w) as f64, &[sum]);
    let logits = b.op(OpType::MatMul, act(256), (2 * t * w * 256) as f64, &[r]);
    b.op(OpType::Softmax, act(256), (5 * t * 256) as f64, &[logits]);
}

/// Random DAG over `n` nodes: each forward pair (i < j) is connected with
/// probability `edge_prob`. Op types and costs are drawn from the seed.
pub fn random_dag(n: usize, edge_prob: f64, seed: u64) -> ComputationGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = [
        OpType::MatMul,
        OpType::Conv,
        OpType::Add,
        OpType::Mul,
        OpType::Reduce,
        OpType::Sigmoid,
        OpType::Relu,
        OpType::Softmax,
    ];
    let nodes: Vec<OpNode> = (0..n)
        .map(|id| {
            let op = ops[rng.gen_range(0..ops.len())];
            let flops = rng.gen_range(1e8..1e9f64).round();
            let out_bytes = (rng.gen_range(1e6..1e8f64) / 4.0).round() * 4.0;
            OpNode::new(id, op, flops, out_bytes)
        })
        .collect();
    let mut edges = Vec::new();
    for dst in 0..n {
        for src in 0..dst {
            if rng.gen_bool(edge_prob) {
                edges.push(TensorEdge { src, dst, bytes: nodes[src].out_bytes });
            }
        }
    }
    ComputationGraph::new(format!("random-n{n}-seed{seed}"), nodes, edges)
        .expect("forward edges only")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rnn_counts() {
        let g = gen_workload(&WorkloadSpec::new(Family::GridRnn, 2, 3, 64, 1)).unwrap();
        assert_eq!(g.len(), 2 * 3 * 4);
        assert_eq!(g.edges().len(), 3 * 6 + 3 + 4);
    }

    #[test]
    fn single_cell_has_no_cross_cell_edges() {
        let g = gen_workload(&WorkloadSpec::new(Family::GridRnn, 1, 1, 64, 1)).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g.edges().len(), 3);
    }

    #[test]
    fn deterministic_serialisation() {
        for family in Family::ALL {
            let spec = WorkloadSpec::new(family, 2, 3, 32, 9);
            let a = gen_workload(&spec).unwrap().to_json();
            let b = gen_workload(&spec).unwrap().to_json();
            assert_eq!(a, b, "{family}");
        }
    }

    #[test]
    fn seed_changes_costs_not_structure() {
        let a = gen_workload(&WorkloadSpec::new(Family::AttentionStack, 2, 2, 32, 1)).unwrap();
        let b = gen_workload(&WorkloadSpec::new(Family::AttentionStack, 2, 2, 32, 2)).unwrap();
        assert_eq!(a.edges().len(), b.edges().len());
        assert_ne!(a.total_flops(), b.total_flops());
    }

    #[test]
    fn formulas_hold_across_sizes() {
        for family in Family::ALL {
            for layers in 1..4 {
                for steps in 1..5 {
                    let spec = WorkloadSpec::new(family, layers, steps, 16, 3);
                    let g = gen_workload(&spec).unwrap();
                    assert_eq!(g.len(), spec.node_count());
                    assert_eq!(g.edges().len(), spec.edge_count());
                }
            }
        }
    }

    #[test]
    fn cap_and_params_checked() {
        let spec = WorkloadSpec::new(Family::GridRnn, 100, 100, 16, 0);
        assert_eq!(
            gen_workload(&spec),
            Err(WorkloadError::SizeCap { nodes: 40_000, cap: DEFAULT_NODE_CAP })
        );
        let spec = WorkloadSpec::new(Family::GridRnn, 0, 3, 16, 0);
        assert!(matches!(gen_workload(&spec), Err(WorkloadError::BadParams(_))));
    }

    #[test]
    fn family_names_parse() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("resnet".parse::<Family>().is_err());
    }
}
