//! The policy network: graph embedding, a segment-recurrent transformer
//! trunk under graph-conditioned feature modulation, chained per-task
//! attention heads and a value head.

use graphopt_core::assign::Task;
use graphopt_core::eval::Evaluator;
use graphopt_core::features::{node_features_blocks, ActionBlock};
use graphopt_core::graph::ComputationGraph;
use graphopt_tensor::{Checkpoint, CheckpointError, ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{Affine, AttnParams, BlockParams, LayerNormParams};
use crate::config::{ConfigError, PolicyConfig};
use crate::embed::{embed, sample_neighbors, EmbedParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task: Task,
    /// Actions per node.
    pub actions: usize,
}

impl TaskSpec {
    /// Specs for `tasks` with the evaluator's action spaces.
    pub fn for_tasks(eval: &Evaluator<'_>, tasks: &[Task]) -> Vec<TaskSpec> {
        tasks.iter().map(|&task| TaskSpec { task, actions: eval.action_space(task) }).collect()
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no tasks given")]
    NoTasks,
    #[error("tasks must be distinct and in placement, schedule, fusion order")]
    TaskOrder,
    #[error("task {0} has an empty action space")]
    EmptyActionSpace(Task),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Everything needed to rebuild a trained policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub config: PolicyConfig,
    pub tasks: Vec<TaskSpec>,
    pub params: Checkpoint,
}

/// Per-task recurrent attention layer and output projection.
#[derive(Debug, Clone)]
pub struct TaskHead {
    pub spec: TaskSpec,
    /// Over `[A^{t-1}, H^{t-1}]`, width `2 d_model`.
    pub ln: LayerNormParams,
    pub proj: Affine,
    pub fc1: Affine,
    pub fc2: Affine,
    pub out: Affine,
}

#[derive(Debug, Clone)]
pub struct PolicyParams {
    pub embed: EmbedParams,
    pub blocks: Vec<BlockParams>,
    pub modulation: BlockParams,
    /// Shared by every task layer.
    pub head_attn: AttnParams,
    pub heads: Vec<TaskHead>,
    pub value: Affine,
}

/// Previous-segment layer inputs, one `rows x d_model` tensor per trunk
/// layer. Held as plain values so nothing flows back through them.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentCache {
    pub layers: Vec<Tensor>,
}

/// Per-graph precomputation: topological row order and sampled
/// neighbourhoods expressed as rows.
#[derive(Debug, Clone)]
pub struct GraphContext {
    /// Node id of each row.
    pub order: Vec<usize>,
    /// Row of each node id.
    pub row_of: Vec<usize>,
    pub neighbors: Vec<Vec<usize>>,
}

impl GraphContext {
    pub fn new(graph: &ComputationGraph, config: &PolicyConfig) -> Self {
        let order = graph.topo_order().to_vec();
        let mut row_of = vec![0; order.len()];
        for (r, &id) in order.iter().enumerate() {
            row_of[id] = r;
        }
        let neighbors = order
            .iter()
            .map(|&id| {
                sample_neighbors(graph, id, config.gs_knn, config.neighbor_seed)
                    .into_iter()
                    .map(|u| row_of[u])
                    .collect()
            })
            .collect();
        Self { order, row_of, neighbors }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Reorders topological rows into node-id rows.
    pub fn rows_by_id(&self, t: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(t.rows(), t.cols());
        for (r, &id) in self.order.iter().enumerate() {
            out.row_mut(id).copy_from_slice(t.row(r));
        }
        out
    }

    /// Node-id indexed values to topological rows.
    pub fn to_rows<T: Copy>(&self, by_id: &[T]) -> Vec<T> {
        self.order.iter().map(|&id| by_id[id]).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replace `m(h_G)` by the all-ones vector.
    pub identity_modulation: bool,
    /// Feed every task layer `A^{t-1} = 0`.
    pub decouple_tasks: bool,
}

/// Tape handles of one forward pass. Node rows are in topological order.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub node_embed: Var,
    pub graph_embed: Var,
    pub modulation: Var,
    pub hidden: Var,
    /// `H^t` per task.
    pub task_hidden: Vec<Var>,
    /// `A^t` per task.
    pub task_repr: Vec<Var>,
    /// `N x a_T` per task.
    pub logits: Vec<Var>,
    /// `1 x 1`.
    pub value: Var,
}

#[derive(Debug, Clone)]
pub struct Policy {
    config: PolicyConfig,
    tasks: Vec<TaskSpec>,
    store: ParamStore,
    params: PolicyParams,
}

impl Policy {
    pub fn new(config: PolicyConfig, tasks: &[TaskSpec], seed: u64) -> Result<Self, PolicyError> {
        config.validate()?;
        if tasks.is_empty() {
            return Err(PolicyError::NoTasks);
        }
        let rank = |t: Task| Task::ALL.iter().position(|&x| x == t).unwrap();
        if tasks.windows(2).any(|w| rank(w[0].task) >= rank(w[1].task)) {
            return Err(PolicyError::TaskOrder);
        }
        if let Some(t) = tasks.iter().find(|t| t.actions == 0) {
            return Err(PolicyError::EmptyActionSpace(t.task));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let features = Self::feature_width_for(tasks);
        let embed = EmbedParams::init(&mut store, features, config.gs_dim, config.gs_layers, &mut rng);
        let block = |store: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng| {
            BlockParams::init(store, name, d, config.n_head, config.d_head, config.d_inner, rng)
        };
        let blocks = (0..config.trf_layers)
            .map(|l| block(&mut store, &format!("trunk.{l}"), &mut rng))
            .collect();
        let modulation = block(&mut store, "modulation", &mut rng);
        let head_attn =
            AttnParams::init(&mut store, "heads.attn", d, config.n_head, config.d_head, &mut rng);
        let heads = tasks
            .iter()
            .map(|&spec| {
                let p = format!("heads.{}", spec.task.short());
                TaskHead {
                    spec,
                    ln: LayerNormParams::init(&mut store, &format!("{p}.ln"), 2 * d),
                    proj: Affine::init(&mut store, &format!("{p}.proj"), 2 * d, d, &mut rng),
                    fc1: Affine::init(&mut store, &format!("{p}.fc1"), d, d, &mut rng),
                    fc2: Affine::init(&mut store, &format!("{p}.fc2"), d, d, &mut rng),
                    out: Affine::init(&mut store, &format!("{p}.out"), d, spec.actions, &mut rng),
                }
            })
            .collect();
        let value = Affine::init(&mut store, "value", d, 1, &mut rng);
        let params = PolicyParams { embed, blocks, modulation, head_attn, heads, value };
        Ok(Self { config, tasks: tasks.to_vec(), store, params })
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint { config: self.config.clone(), tasks: self.tasks.clone(), params: self.store.checkpoint() }
    }

    pub fn from_checkpoint(ckpt: &PolicyCheckpoint) -> Result<Self, PolicyError> {
        let mut policy = Self::new(ckpt.config.clone(), &ckpt.tasks, 0)?;
        policy.store.restore(&ckpt.params)?;
        Ok(policy)
    }

    fn feature_width_for(tasks: &[TaskSpec]) -> usize {
        let blocks: Vec<ActionBlock<'_>> = tasks.iter().map(|t| ActionBlock::empty(t.actions)).collect();
        graphopt_core::features::feature_width(&blocks)
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn feature_width(&self) -> usize {
        Self::feature_width_for(&self.tasks)
    }

    pub fn context(&self, graph: &ComputationGraph) -> GraphContext {
        GraphContext::new(graph, &self.config)
    }

    /// Topologically ordered feature rows; `prev[t]` holds task `t`'s
    /// previous actions by node id, if any.
    pub fn features(&self, graph: &ComputationGraph, prev: Option<&[Vec<usize>]>) -> Tensor {
        let blocks: Vec<ActionBlock<'_>> = self
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| ActionBlock { space: t.actions, actions: prev.map(|p| p[i].as_slice()) })
            .collect();
        let fm = node_features_blocks(graph, &blocks).expect("previous actions come from this policy");
        Tensor::new(fm.rows, fm.cols, fm.values)
    }

    /// `2 sigmoid(block(h_G))` with `h_G` as a length-one sequence.
    pub fn modulate(&self, tape: &mut Tape, graph_embed: Var) -> Var {
        let z = self.params.modulation.forward(tape, &self.store, graph_embed, graph_embed);
        let s = tape.sigmoid(z);
        tape.scale(s, 2.0)
    }

    /// One trunk segment. Each layer sees `m ⊙ x`; keys and values are the
    /// cached previous-segment inputs of that layer stacked above the
    /// current ones. Returns the output and this segment's cache.
    pub fn forward_segment(
        &self,
        tape: &mut Tape,
        modulation: Var,
        input: Var,
        cache: Option<&SegmentCache>,
    ) -> (Var, SegmentCache) {
        if let Some(c) = cache {
            assert_eq!(c.layers.len(), self.params.blocks.len(), "one cached input per layer");
        }
        let mut x = input;
        let mut layers = Vec::with_capacity(self.params.blocks.len());
        for (l, block) in self.params.blocks.iter().enumerate() {
            let u = tape.mul_row(x, modulation);
            layers.push(tape.value(u).clone());
            let kv = match cache {
                Some(c) => {
                    let mem = tape.constant(c.layers[l].clone());
                    tape.concat_rows(&[mem, u])
                }
                None => u,
            };
            x = block.forward(tape, &self.store, u, kv);
        }
        (x, SegmentCache { layers })
    }

    /// All segments of `segment_len` rows in order.
    pub fn trunk_forward(&self, tape: &mut Tape, nodes: Var, modulation: Var) -> Var {
        let n = tape.shape(nodes).0;
        let s = self.config.segment_len;
        if n <= s {
            return self.forward_segment(tape, modulation, nodes, None).0;
        }
        let mut outs = Vec::with_capacity(n.div_ceil(s));
        let mut cache: Option<SegmentCache> = None;
        for start in (0..n).step_by(s) {
            let seg = tape.slice_rows(nodes, start, s.min(n - start));
            let (out, next) = self.forward_segment(tape, modulation, seg, cache.as_ref());
            outs.push(out);
            cache = Some(next);
        }
        tape.concat_rows(&outs)
    }

    /// Shared task attention, segment-recurrent like the trunk.
    fn head_attention(&self, tape: &mut Tape, h: Var) -> Var {
        let n = tape.shape(h).0;
        let s = self.config.segment_len;
        let attn = &self.params.head_attn;
        if n <= s {
            return attn.forward(tape, &self.store, h, h);
        }
        let mut outs = Vec::with_capacity(n.div_ceil(s));
        let mut prev: Option<Var> = None;
        for start in (0..n).step_by(s) {
            let seg = tape.slice_rows(h, start, s.min(n - start));
            let kv = match prev {
                Some(p) => {
                    let mem = tape.detach(p);
                    tape.concat_rows(&[mem, seg])
                }
                None => seg,
            };
            outs.push(attn.forward(tape, &self.store, seg, kv));
            prev = Some(seg);
        }
        tape.concat_rows(&outs)
    }

    /// Task layers `heads[range]` starting from `hidden` with `A = 0`:
    /// `H^t = LN([A^{t-1}, H^{t-1}]) P`, `A^t = FC(MHA(H^t))`.
    /// Returns `(H^t, A^t, logits)` per task.
    pub fn task_heads(
        &self,
        tape: &mut Tape,
        hidden: Var,
        range: std::ops::Range<usize>,
        decouple: bool,
    ) -> (Vec<Var>, Vec<Var>, Vec<Var>) {
        let (n, d) = tape.shape(hidden);
        let zero = tape.constant(Tensor::zeros(n, d));
        let (mut h, mut a) = (hidden, zero);
        let (mut hs, mut reprs, mut logits) = (Vec::new(), Vec::new(), Vec::new());
        for head in &self.params.heads[range] {
            let prev_a = if decouple { zero } else { a };
            let cat = tape.concat_cols(&[prev_a, h]);
            let normed = head.ln.forward(tape, &self.store, cat);
            h = head.proj.forward(tape, &self.store, normed);
            let att = self.head_attention(tape, h);
            let f = head.fc1.forward(tape, &self.store, att);
            let f = tape.relu(f);
            a = head.fc2.forward(tape, &self.store, f);
            logits.push(head.out.forward(tape, &self.store, a));
            hs.push(h);
            reprs.push(a);
        }
        (hs, reprs, logits)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext,
        features: &Tensor,
        opts: ForwardOptions,
    ) -> ForwardOutput {
        assert_eq!(features.rows(), ctx.len(), "one feature row per node");
        let x = tape.constant(features.clone());
        let emb = embed(tape, &self.store, &self.params.embed, x, &ctx.neighbors);
        let modulation = if opts.identity_modulation {
            tape.constant(Tensor::full(1, self.config.d_model, 1.0))
        } else {
            self.modulate(tape, emb.graph)
        };
        let hidden = self.trunk_forward(tape, emb.nodes, modulation);
        let (task_hidden, task_repr, logits) =
            self.task_heads(tape, hidden, 0..self.tasks.len(), opts.decouple_tasks);
        let pooled = tape.mean_rows(*task_repr.last().expect("at least one task"));
        let value = self.params.value.forward(tape, &self.store, pooled);
        ForwardOutput {
            node_embed: emb.nodes,
            graph_embed: emb.graph,
            modulation,
            hidden,
            task_hidden,
            task_repr,
            logits,
            value,
        }
    }

    /// Every parameter id, grouped by component.
    pub fn param_groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let p = &self.params;
        let blocks = |bs: &[&BlockParams]| {
            bs.iter()
                .flat_map(|b| {
                    let mut v = b.attn.ids();
                    v.extend([b.ln1.gain, b.ln1.bias, b.ff1.w, b.ff1.b, b.ff2.w, b.ff2.b, b.ln2.gain, b.ln2.bias]);
                    v
                })
                .collect::<Vec<_>>()
        };
        let heads = p
            .heads
            .iter()
            .flat_map(|h| {
                [h.ln.gain, h.ln.bias, h.proj.w, h.proj.b, h.fc1.w, h.fc1.b, h.fc2.w, h.fc2.b, h.out.w, h.out.b]
            })
            .collect();
        vec![
            ("embed", p.embed.ids()),
            ("trunk", blocks(&p.blocks.iter().collect::<Vec<_>>())),
            ("modulation", blocks(&[&p.modulation])),
            ("head_attn", p.head_attn.ids()),
            ("heads", heads),
            ("value", vec![p.value.w, p.value.b]),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use graphopt_core::graph::{OpNode, OpType, TensorEdge};

    fn specs() -> Vec<TaskSpec> {
        vec![
            TaskSpec { task: Task::Placement, actions: 2 },
            TaskSpec { task: Task::Schedule, actions: 3 },
        ]
    }

    fn chain(n: usize) -> ComputationGraph {
        let nodes = (0..n).map(|i| OpNode::new(i, OpType::Add, 10.0 + i as f64, 8.0)).collect();
        let edges = (1..n).map(|i| TensorEdge { src: i - 1, dst: i, bytes: 8.0 }).collect();
        ComputationGraph::new("chain", nodes, edges).unwrap()
    }

    #[test]
    fn rejects_bad_task_lists() {
        let c = PolicyConfig::small();
        assert!(matches!(Policy::new(c.clone(), &[], 0), Err(PolicyError::NoTasks)));
        let mut rev = specs();
        rev.reverse();
        assert!(matches!(Policy::new(c.clone(), &rev, 0), Err(PolicyError::TaskOrder)));
        let dup = [specs()[0], specs()[0]];
        assert!(matches!(Policy::new(c, &dup, 0), Err(PolicyError::TaskOrder)));
    }

    #[test]
    fn output_shapes() {
        let p = Policy::new(PolicyConfig::small(), &specs(), 1).unwrap();
        let g = chain(5);
        let ctx = p.context(&g);
        let f = p.features(&g, None);
        let mut tape = Tape::new();
        let out = p.forward(&mut tape, &ctx, &f, ForwardOptions::default());
        assert_eq!(tape.shape(out.logits[0]), (5, 2));
        assert_eq!(tape.shape(out.logits[1]), (5, 3));
        assert_eq!(tape.shape(out.value), (1, 1));
        assert_eq!(tape.shape(out.modulation), (1, 32));
        assert!(tape.value(out.logits[1]).is_finite());
    }

    #[test]
    fn zero_preactivation_gives_identity_modulation() {
        let mut p = Policy::new(PolicyConfig::small(), &specs(), 1).unwrap();
        // A zero final layer norm makes the block output exactly zero.
        let ln2 = p.params.modulation.ln2;
        p.store_mut().value_mut(ln2.gain).data_mut().fill(0.0);
        let mut tape = Tape::new();
        let h = tape.input(Tensor::full(1, 32, 0.3));
        let m = p.modulate(&mut tape, h);
        assert!(tape.value(m).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn modulation_differs_between_graph_embeddings() {
        let p = Policy::new(PolicyConfig::small(), &specs(), 1).unwrap();
        let mut tape = Tape::new();
        let a = tape.input(Tensor::full(1, 32, 0.3));
        let b = tape.input(Tensor::new(1, 32, (0..32).map(|i| i as f64 / 10.0).collect()));
        let ma = p.modulate(&mut tape, a);
        let mb = p.modulate(&mut tape, b);
        assert_ne!(tape.value(ma), tape.value(mb));
        assert!(tape.value(ma).data().iter().all(|&v| v > 0.0 && v < 2.0));
    }

    #[test]
    fn rows_by_id_inverts_topological_order() {
        let p = Policy::new(PolicyConfig::small(), &specs(), 1).unwrap();
        let nodes = (0..3).map(|i| OpNode::new(i, OpType::Add, 1.0, 4.0)).collect();
        let edges = vec![TensorEdge { src: 2, dst: 0, bytes: 1.0 }, TensorEdge { src: 0, dst: 1, bytes: 1.0 }];
        let g = ComputationGraph::new("g", nodes, edges).unwrap();
        let ctx = p.context(&g);
        assert_eq!(ctx.order, vec![2, 0, 1]);
        let t = Tensor::new(3, 1, vec![20.0, 0.0, 10.0]);
        assert_eq!(ctx.rows_by_id(&t).data(), &[0.0, 10.0, 20.0]);
        assert_eq!(ctx.to_rows(&[5, 6, 7]), vec![7, 5, 6]);
    }
}
