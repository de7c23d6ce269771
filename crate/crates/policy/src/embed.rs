//! Inductive graph embedding: sampled-neighbour max-pool aggregation
//! followed by a concat/FC update, repeated per layer, then mean pooling.

use graphopt_core::graph::ComputationGraph;
use graphopt_tensor::{ParamId, ParamStore, Tape, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Neighbours of `node` (in and out), all of them when there are at most
/// `k`, otherwise `k` drawn without replacement from a stream fixed by
/// `(seed, node)`. Ascending ids.
pub fn sample_neighbors(graph: &ComputationGraph, node: usize, k: usize, seed: u64) -> Vec<usize> {
    assert!(k >= 1, "sample at least one neighbour");
    let all = graph.neighbors(node);
    if all.len() <= k {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (node as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let _ = rng.gen::<u64>();
    let mut picked: Vec<usize> = sample(&mut rng, all.len(), k).into_iter().map(|i| all[i]).collect();
    picked.sort_unstable();
    picked
}

/// Per-layer parameter ids.
#[derive(Debug, Clone)]
pub struct EmbedLayer {
    /// Neighbour transform, `gs_dim x gs_dim` and `1 x gs_dim`.
    pub w: ParamId,
    pub b: ParamId,
    /// Update FC from `[h, h_N]`, `2 gs_dim x gs_dim` and `1 x gs_dim`.
    pub f: ParamId,
    pub c: ParamId,
}

#[derive(Debug, Clone)]
pub struct EmbedParams {
    pub input_w: ParamId,
    pub input_b: ParamId,
    pub layers: Vec<EmbedLayer>,
}

impl EmbedParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        features: usize,
        dim: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let input_w = store.add_uniform("embed.input.w", features, dim, features, rng);
        let input_b = store.add_uniform("embed.input.b", 1, dim, features, rng);
        let layers = (0..layers)
            .map(|l| EmbedLayer {
                w: store.add_uniform(format!("embed.{l}.w"), dim, dim, dim, rng),
                b: store.add_uniform(format!("embed.{l}.b"), 1, dim, dim, rng),
                f: store.add_uniform(format!("embed.{l}.f"), 2 * dim, dim, 2 * dim, rng),
                c: store.add_uniform(format!("embed.{l}.c"), 1, dim, 2 * dim, rng),
            })
            .collect();
        Self { input_w, input_b, layers }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut out = vec![self.input_w, self.input_b];
        for l in &self.layers {
            out.extend([l.w, l.b, l.f, l.c]);
        }
        out
    }
}

/// Node embeddings (rows as the feature rows) and their mean.
#[derive(Debug, Clone, Copy)]
pub struct Embeddings {
    pub nodes: Var,
    pub graph: Var,
}

/// `neighbors[r]` lists the feature rows aggregated into row `r`; an empty
/// list aggregates to zero.
pub fn embed(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EmbedParams,
    features: Var,
    neighbors: &[Vec<usize>],
) -> Embeddings {
    assert_eq!(tape.shape(features).0, neighbors.len(), "one neighbour list per row");
    let w = tape.param(store, params.input_w);
    let b = tape.param(store, params.input_b);
    let x = tape.matmul(features, w);
    let mut h = tape.add_row(x, b);
    for layer in &params.layers {
        let w = tape.param(store, layer.w);
        let b = tape.param(store, layer.b);
        let f = tape.param(store, layer.f);
        let c = tape.param(store, layer.c);
        let t = tape.matmul(h, w);
        let t = tape.add_row(t, b);
        let t = tape.sigmoid(t);
        let agg = tape.segment_max(t, neighbors);
        let cat = tape.concat_cols(&[h, agg]);
        let u = tape.matmul(cat, f);
        let u = tape.add_row(u, c);
        h = tape.relu(u);
    }
    let graph = tape.mean_rows(h);
    Embeddings { nodes: h, graph }
}

#[cfg(test)]
mod tests {
    use super::*;
    use graphopt_core::graph::{OpNode, OpType, TensorEdge};

    fn star(leaves: usize) -> ComputationGraph {
        let nodes = (0..=leaves).map(|i| OpNode::new(i, OpType::Add, 1.0, 4.0)).collect();
        let edges = (1..=leaves).map(|i| TensorEdge { src: 0, dst: i, bytes: 4.0 }).collect();
        ComputationGraph::new("star", nodes, edges).unwrap()
    }

    #[test]
    fn small_neighbourhoods_are_returned_whole() {
        let g = star(3);
        assert_eq!(sample_neighbors(&g, 0, 5, 1), vec![1, 2, 3]);
        assert_eq!(sample_neighbors(&g, 2, 5, 1), vec![0]);
    }

    #[test]
    fn large_neighbourhoods_are_sampled_deterministically() {
        let g = star(10);
        let a = sample_neighbors(&g, 0, 5, 7);
        assert_eq!(a.len(), 5);
        assert_eq!(a, sample_neighbors(&g, 0, 5, 7));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&u| (1..=10).contains(&u)));
    }

    #[test]
    fn isolated_node_has_no_neighbours() {
        let g = ComputationGraph::new("one", vec![OpNode::new(0, OpType::Add, 1.0, 4.0)], vec![])
            .unwrap();
        assert!(sample_neighbors(&g, 0, 5, 0).is_empty());
    }
}
