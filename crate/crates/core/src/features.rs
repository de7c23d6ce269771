//! Node featurisation for the policy network.
//!
//! Row layout: one-hot op type, `log1p(flops)`, `log1p(out_bytes)`, in-degree,
//! out-degree, then one one-hot block per previous-iteration action vector.
//! Rows follow the graph's topological order.

use thiserror::Error;

use crate::graph::{ComputationGraph, OpType};

/// Columns before the previous-action blocks.
pub const STATIC_FEATURES: usize = OpType::COUNT + 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("previous actions cover {got} nodes, graph has {n}")]
    Length { got: usize, n: usize },
    #[error("node {node}: action {action} outside [0, {space})")]
    ActionOutOfRange { node: usize, action: usize, space: usize },
}

/// One previous-iteration action block: the action space size and, once a
/// decision exists, the per-node actions (indexed by node id).
#[derive(Debug, Clone, Copy)]
pub struct ActionBlock<'a> {
    pub space: usize,
    pub actions: Option<&'a [usize]>,
}

impl<'a> ActionBlock<'a> {
    pub fn empty(space: usize) -> Self {
        Self { space, actions: None }
    }

    pub fn new(space: usize, actions: &'a [usize]) -> Self {
        Self { space, actions: Some(actions) }
    }
}

/// Dense row-major `rows x cols` matrix of node features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    /// Node id of each row.
    pub order: Vec<usize>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn feature_width(blocks: &[ActionBlock<'_>]) -> usize {
    STATIC_FEATURES + blocks.iter().map(|b| b.space).sum::<usize>()
}

/// Single-task featurisation.
pub fn node_features(
    graph: &ComputationGraph,
    prev_actions: Option<&[usize]>,
    action_space: usize,
) -> Result<FeatureMatrix, FeatureError> {
    node_features_blocks(graph, &[ActionBlock { space: action_space, actions: prev_actions }])
}

pub fn node_features_blocks(
    graph: &ComputationGraph,
    blocks: &[ActionBlock<'_>],
) -> Result<FeatureMatrix, FeatureError> {
    let n = graph.len();
    for block in blocks {
        if let Some(actions) = block.actions {
            if actions.len() != n {
                return Err(FeatureError::Length { got: actions.len(), n });
            }
            if let Some((node, &action)) =
                actions.iter().enumerate().find(|(_, &a)| a >= block.space)
            {
                return Err(FeatureError::ActionOutOfRange { node, action, space: block.space });
            }
        }
    }

    let cols = feature_width(blocks);
    let order = graph.topo_order().to_vec();
    let mut values = vec![0.0; n * cols];
    for (row, &id) in order.iter().enumerate() {
        let node = graph.node(id);
        let out = &mut values[row * cols..(row + 1) * cols];
        out[node.op.index()] = 1.0;
        let base = OpType::COUNT;
        out[base] = node.flops.ln_1p();
        out[base + 1] = node.out_bytes.ln_1p();
        out[base + 2] = graph.in_degree(id) as f64;
        out[base + 3] = graph.out_degree(id) as f64;
        let mut offset = STATIC_FEATURES;
        for block in blocks {
            if let Some(actions) = block.actions {
                out[offset + actions[id]] = 1.0;
            }
            offset += block.space;
        }
    }
    Ok(FeatureMatrix { rows: n, cols, values, order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{OpNode, TensorEdge};

    fn single(flops: f64) -> ComputationGraph {
        ComputationGraph::new("one", vec![OpNode::new(0, OpType::Relu, flops, 16.0)], vec![])
            .unwrap()
    }

    #[test]
    fn absent_actions_leave_zero_block() {
        let f = node_features(&single(3.0), None, 4).unwrap();
        assert_eq!(f.rows, 1);
        assert_eq!(f.cols, STATIC_FEATURES + 4);
        assert!(f.row(0)[STATIC_FEATURES..].iter().all(|&v| v == 0.0));
        assert_eq!(f.row(0)[OpType::Relu.index()], 1.0);
    }

    #[test]
    fn previous_action_is_one_hot() {
        let f = node_features(&single(3.0), Some(&[2]), 4).unwrap();
        assert_eq!(&f.row(0)[STATIC_FEATURES..], &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_flops_gives_zero_log_feature() {
        let f = node_features(&single(0.0), None, 2).unwrap();
        assert_eq!(f.row(0)[OpType::COUNT], 0.0);
        assert_eq!(f.row(0)[OpType::COUNT + 1], 16f64.ln_1p());
    }

    #[test]
    fn out_of_range_action_rejected() {
        assert_eq!(
            node_features(&single(1.0), Some(&[4]), 4),
            Err(FeatureError::ActionOutOfRange { node: 0, action: 4, space: 4 })
        );
        assert_eq!(
            node_features(&single(1.0), Some(&[0, 1]), 4),
            Err(FeatureError::Length { got: 2, n: 1 })
        );
    }

    #[test]
    fn rows_follow_topological_order() {
        let nodes = vec![
            OpNode::new(0, OpType::Add, 1.0, 4.0),
            OpNode::new(1, OpType::MatMul, 2.0, 4.0),
        ];
        let g = ComputationGraph::new("g", nodes, vec![TensorEdge { src: 1, dst: 0, bytes: 4.0 }])
            .unwrap();
        let f = node_features_blocks(
            &g,
            &[ActionBlock::new(2, &[0, 1]), ActionBlock::new(3, &[2, 0])],
        )
        .unwrap();
        assert_eq!(f.order, vec![1, 0]);
        assert_eq!(f.row(0)[OpType::MatMul.index()], 1.0);
        // node 1: in 0, out 1, actions (1, 0)
        assert_eq!(&f.row(0)[OpType::COUNT + 2..], &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(&f.row(1)[OpType::COUNT + 2..], &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }
}
