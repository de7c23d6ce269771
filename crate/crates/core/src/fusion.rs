//! Priority-driven op fusion.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::cost::{fused_cost, OpCost};
use crate::graph::{ComputationGraph, OpNode, TensorEdge};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// Largest number of original ops in one fused kernel.
    pub max_group: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { max_group: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedGroup {
    /// Original node ids, ascending. The first one is the group leader.
    pub members: Vec<usize>,
    pub cost: OpCost,
    /// Bytes the group leaves in global memory once it completes.
    pub out_bytes: f64,
}

impl FusedGroup {
    pub fn leader(&self) -> usize {
        self.members[0]
    }
}

/// Data dependency between two groups, summed over the original edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupEdge {
    pub src: usize,
    pub dst: usize,
    pub bytes: f64,
}

/// A graph partitioned into fused groups. Groups are numbered by ascending
/// leader id, and the group graph is acyclic.
#[derive(Debug, Clone)]
pub struct FusedGraph<'g> {
    graph: &'g ComputationGraph,
    group_of: Vec<usize>,
    groups: Vec<FusedGroup>,
    edges: Vec<GroupEdge>,
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl<'g> FusedGraph<'g> {
    /// Every node in its own group.
    pub fn unfused(graph: &'g ComputationGraph) -> Self {
        Self::from_labels(graph, (0..graph.len()).collect())
    }

    /// Builds groups from per-node labels; nodes sharing a label share a group.
    ///
    /// Panics if the labels induce a cyclic group graph.
    pub fn from_labels(graph: &'g ComputationGraph, labels: Vec<usize>) -> Self {
        let n = graph.len();
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (v, &l) in labels.iter().enumerate() {
            by_label.entry(l).or_default().push(v);
        }
        let mut member_lists: Vec<Vec<usize>> = by_label.into_values().collect();
        member_lists.sort_by_key(|m| m[0]);
        let mut group_of = vec![0; n];
        for (g, members) in member_lists.iter().enumerate() {
            for &v in members {
                group_of[v] = g;
            }
        }

        let mut group_edges: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let groups: Vec<FusedGroup> = member_lists
            .into_iter()
            .enumerate()
            .map(|(g, members)| {
                let nodes: Vec<&OpNode> = members.iter().map(|&v| graph.node(v)).collect();
                let (mut internal, mut ext_in, mut ext_out) = (Vec::new(), Vec::new(), Vec::new());
                for &v in &members {
                    for &e in graph.in_edges(v) {
                        let edge: TensorEdge = graph.edges()[e];
                        if group_of[edge.src] == g {
                            internal.push(edge);
                        } else {
                            ext_in.push(edge);
                            *group_edges.entry((group_of[edge.src], g)).or_default() += edge.bytes;
                        }
                    }
                    for &e in graph.out_edges(v) {
                        let edge = graph.edges()[e];
                        if group_of[edge.dst] != g {
                            ext_out.push(edge);
                        }
                    }
                }
                let cost = fused_cost(&nodes, &internal, &ext_in, &ext_out);
                let out_bytes = cost.bytes_accessed - ext_in.iter().map(|e| e.bytes).sum::<f64>();
                FusedGroup { members, cost, out_bytes }
            })
            .collect();

        let count = groups.len();
        let edges: Vec<GroupEdge> = group_edges
            .into_iter()
            .map(|((src, dst), bytes)| GroupEdge { src, dst, bytes })
            .collect();
        let mut in_edges = vec![Vec::new(); count];
        let mut out_edges = vec![Vec::new(); count];
        for (i, e) in edges.iter().enumerate() {
            out_edges[e.src].push(i);
            in_edges[e.dst].push(i);
        }

        let mut indeg: Vec<usize> = in_edges.iter().map(Vec::len).collect();
        let mut heap: BinaryHeap<Reverse<usize>> =
            (0..count).filter(|&g| indeg[g] == 0).map(Reverse).collect();
        let mut topo = Vec::with_capacity(count);
        while let Some(Reverse(g)) = heap.pop() {
            topo.push(g);
            for &e in &out_edges[g] {
                let h = edges[e].dst;
                indeg[h] -= 1;
                if indeg[h] == 0 {
                    heap.push(Reverse(h));
                }
            }
        }
        assert_eq!(topo.len(), count, "fusion labels produced a cyclic group graph");

        Self { graph, group_of, groups, edges, in_edges, out_edges, topo }
    }

    pub fn graph(&self) -> &'g ComputationGraph {
        self.graph
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[FusedGroup] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &FusedGroup {
        &self.groups[g]
    }

    pub fn group_of(&self, node: usize) -> usize {
        self.group_of[node]
    }

    pub fn edges(&self) -> &[GroupEdge] {
        &self.edges
    }

    pub fn in_edges(&self, g: usize) -> &[usize] {
        &self.in_edges[g]
    }

    pub fn out_edges(&self, g: usize) -> &[usize] {
        &self.out_edges[g]
    }

    /// Group topological order, ties broken by ascending group id.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }
}

/// Greedy fusion pass.
///
/// Nodes are visited by descending priority (ties: ascending id). A visited
/// node with non-zero priority joins the group of its best already-visited
/// neighbour (highest priority, then lowest id) when both ops are fusible,
/// the merged group stays within `max_group` ops and the group graph stays
/// acyclic. Candidates failing a check are skipped in favour of the next.
pub fn apply_fusion<'g>(
    graph: &'g ComputationGraph,
    priorities: &[usize],
    config: &FusionConfig,
) -> FusedGraph<'g> {
    assert_eq!(priorities.len(), graph.len(), "one fusion priority per node");
    let n = graph.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (Reverse(priorities[v]), v));

    let mut label: Vec<usize> = (0..n).collect();
    let mut members: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
    let mut visited = vec![false; n];
    let mut search = CycleSearch::new(n);

    for &v in &order {
        visited[v] = true;
        if priorities[v] == 0 || !graph.node(v).op.is_fusible() {
            continue;
        }
        let mut candidates: Vec<usize> = graph
            .neighbors(v)
            .into_iter()
            .filter(|&u| visited[u] && priorities[u] > 0 && graph.node(u).op.is_fusible())
            .collect();
        candidates.sort_by_key(|&u| (Reverse(priorities[u]), u));
        for u in candidates {
            let (a, b) = (label[u], label[v]);
            if a == b || members[a].len() + members[b].len() > config.max_group {
                continue;
            }
            if search.merge_creates_cycle(graph, &label, &members, a, b) {
                continue;
            }
            let moved = std::mem::take(&mut members[b]);
            for &w in &moved {
                label[w] = a;
            }
            members[a].extend(moved);
            break;
        }
    }
    FusedGraph::from_labels(graph, label)
}

/// Reusable scratch space for the group-level reachability test.
struct CycleSearch {
    stamp: Vec<u32>,
    epoch: u32,
    stack: Vec<usize>,
}

impl CycleSearch {
    fn new(n: usize) -> Self {
        Self { stamp: vec![0; n], epoch: 0, stack: Vec::new() }
    }

    /// Whether contracting groups `a` and `b` closes a cycle: some path leaves
    /// the merged set and re-enters it through other (contracted) groups.
    fn merge_creates_cycle(
        &mut self,
        graph: &ComputationGraph,
        label: &[usize],
        members: &[Vec<usize>],
        a: usize,
        b: usize,
    ) -> bool {
        self.epoch += 1;
        let epoch = self.epoch;
        self.stack.clear();
        for &g in &[a, b] {
            for &v in &members[g] {
                for w in graph.successors(v) {
                    let h = label[w];
                    if h != a && h != b && self.stamp[h] != epoch {
                        self.stamp[h] = epoch;
                        self.stack.push(h);
                    }
                }
            }
        }
        while let Some(g) = self.stack.pop() {
            for &v in &members[g] {
                for w in graph.successors(v) {
                    let h = label[w];
                    if h == a || h == b {
                        return true;
                    }
                    if self.stamp[h] != epoch {
                        self.stamp[h] = epoch;
                        self.stack.push(h);
                    }
                }
            }
        }
        false
    }
}
