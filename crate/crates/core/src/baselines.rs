//! Non-learned optimisers: fanout priorities, balanced greedy placement,
//! simulated annealing and exhaustive search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::{ActionAssignment, Task};
use crate::cost::DeviceTopology;
use crate::eval::{Decision, Evaluator};
use crate::graph::ComputationGraph;

/// Number of nodes reachable from each node.
pub fn descendant_counts(graph: &ComputationGraph) -> Vec<usize> {
    let n = graph.len();
    let words = n.div_ceil(64);
    let mut reach = vec![0u64; n * words];
    for &v in graph.topo_order().iter().rev() {
        for s in graph.successors(v) {
            let (head, tail) = reach.split_at_mut(v.max(s) * words);
            let (dst, src) = if v < s {
                (&mut head[v * words..(v + 1) * words], &tail[..words])
            } else {
                (&mut tail[..words], &head[s * words..(s + 1) * words])
            };
            for (d, w) in dst.iter_mut().zip(src) {
                *d |= w;
            }
            reach[v * words + s / 64] |= 1 << (s % 64);
        }
    }
    (0..n)
        .map(|v| reach[v * words..(v + 1) * words].iter().map(|w| w.count_ones() as usize).sum())
        .collect()
}

/// Schedule priorities from descendant counts: a node's level is the quantile
/// of its count among all counts, bucketed into `levels`.
pub fn fanout_priorities(graph: &ComputationGraph, levels: usize) -> ActionAssignment {
    assert!(levels >= 1, "at least one priority level");
    let n = graph.len();
    let counts = descendant_counts(graph);
    let mut sorted = counts.clone();
    sorted.sort_unstable();
    let actions = counts
        .iter()
        .map(|&c| {
            if n <= 1 {
                return 0;
            }
            let below = sorted.partition_point(|&x| x < c);
            let q = below as f64 / (n - 1) as f64;
            ((q * levels as f64).floor() as usize).min(levels - 1)
        })
        .collect();
    ActionAssignment::new(Task::Schedule, actions)
}

/// Splits the topological order into at most `|D|` contiguous chunks whose
/// largest flop total is minimal, preferring long early chunks. Chunk `i`
/// goes to device `i`. Colocated nodes then follow their lowest-id member.
pub fn greedy_placement(graph: &ComputationGraph, topology: &DeviceTopology) -> ActionAssignment {
    let n = graph.len();
    let devices = topology.len();
    let flops: Vec<f64> = graph.topo_order().iter().map(|&v| graph.node(v).flops).collect();
    let total: f64 = flops.iter().sum();
    let mut placement = vec![0; n];
    if devices > 1 && total > 0.0 {
        let mut lo = flops.iter().cloned().fold(0.0, f64::max);
        let mut hi = total;
        if !fits(&flops, lo, devices) {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if fits(&flops, mid, devices) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        } else {
            hi = lo;
        }
        for (chunk, &v) in chunk_indices(&flops, hi).iter().zip(graph.topo_order()) {
            placement[v] = *chunk;
        }
    }

    let mut anchor: Vec<(&str, usize)> = Vec::new();
    for node in graph.nodes() {
        if let Some(tag) = node.colocate.as_deref() {
            match anchor.iter().find(|(t, _)| *t == tag) {
                Some(&(_, d)) => placement[node.id] = d,
                None => anchor.push((tag, placement[node.id])),
            }
        }
    }
    ActionAssignment::new(Task::Placement, placement)
}

fn chunk_indices(flops: &[f64], bound: f64) -> Vec<usize> {
    let mut chunk = 0;
    let mut sum = 0.0;
    flops
        .iter()
        .map(|&f| {
            if sum + f > bound && sum > 0.0 {
                chunk += 1;
                sum = 0.0;
            }
            sum += f;
            chunk
        })
        .collect()
}

fn fits(flops: &[f64], bound: f64, devices: usize) -> bool {
    flops.iter().all(|&f| f <= bound)
        && chunk_indices(flops, bound).last().map_or(true, |&c| c < devices)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaConfig {
    pub iterations: usize,
    /// Acceptance temperature for step-time changes relative to the initial
    /// step time. Zero gives pure hill climbing.
    pub initial_temperature: f64,
    /// Geometric factor in (0, 1).
    pub cooling: f64,
    pub moves_per_step: usize,
    pub seed: u64,
}

impl Default for SaConfig {
    fn default() -> Self {
        Self { iterations: 5000, initial_temperature: 0.05, cooling: 0.999, moves_per_step: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub decision: Decision,
    pub step_time: f64,
    pub initial_step_time: f64,
    pub evaluations: usize,
}

/// Anneals the concatenated action vectors of `tasks`, starting from the
/// evaluator's defaults. Invalid states cost infinity. Returns the best state
/// seen.
pub fn simulated_annealing(eval: &Evaluator<'_>, tasks: &[Task], config: &SaConfig) -> SearchResult {
    assert!(!tasks.is_empty(), "at least one task");
    assert!(config.iterations >= 1, "at least one iteration");
    assert!(
        config.cooling > 0.0 && config.cooling < 1.0,
        "cooling factor must lie in (0, 1)"
    );
    let n = eval.graph().len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut current = Decision::default();
    for &t in tasks {
        current.set(t, eval.default_actions(t));
    }
    let initial = eval.cost(&current);
    let scale = if initial.is_finite() && initial > 0.0 { initial } else { 1.0 };
    let mut cost = initial;
    let mut best = (current.clone(), cost);
    let mut temperature = config.initial_temperature;
    let mut evaluations = 1;

    for _ in 0..config.iterations {
        let mut candidate = current.clone();
        for _ in 0..config.moves_per_step.max(1) {
            let task = tasks[rng.gen_range(0..tasks.len())];
            let node = rng.gen_range(0..n);
            let action = rng.gen_range(0..eval.action_space(task));
            let mut actions = candidate.get(task).expect("task initialised").to_vec();
            actions[node] = action;
            candidate.set(task, actions);
        }
        let next = eval.cost(&candidate);
        evaluations += 1;
        let accept = if next <= cost {
            true
        } else if temperature > 0.0 && next.is_finite() {
            let delta = (next - cost) / scale;
            rng.gen::<f64>() < (-delta / temperature).exp()
        } else {
            false
        };
        if accept {
            current = candidate;
            cost = next;
            if cost < best.1 {
                best = (current.clone(), cost);
            }
        }
        temperature *= config.cooling;
    }
    SearchResult { decision: best.0, step_time: best.1, initial_step_time: initial, evaluations }
}

pub const DEFAULT_BRUTE_LIMIT: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("search space {space}^{nodes} exceeds the limit of {limit} assignments")]
pub struct SearchSpaceOverflow {
    pub space: usize,
    pub nodes: usize,
    pub limit: u64,
}

/// Enumerates every action vector for `task` (other tasks at their defaults)
/// in lexicographic order, node 0 most significant, and keeps the first
/// strict minimum.
pub fn brute_force(
    eval: &Evaluator<'_>,
    task: Task,
    limit: u64,
) -> Result<SearchResult, SearchSpaceOverflow> {
    let n = eval.graph().len();
    let space = eval.action_space(task);
    let overflow = SearchSpaceOverflow { space, nodes: n, limit };
    let total = (0..n).try_fold(1u64, |acc, _| acc.checked_mul(space as u64));
    match total {
        Some(t) if t <= limit => {}
        _ => return Err(overflow),
    }

    let initial = {
        let mut d = Decision::default();
        d.set(task, eval.default_actions(task));
        eval.cost(&d)
    };
    let mut actions = vec![0; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut evaluations = 0;
    loop {
        let mut d = Decision::default();
        d.set(task, actions.clone());
        let cost = eval.cost(&d);
        evaluations += 1;
        if best.as_ref().map_or(true, |(_, b)| cost < *b) {
            best = Some((actions.clone(), cost));
        }
        // Odometer increment, last node fastest.
        let mut i = n;
        loop {
            if i == 0 {
                let (actions, step_time) = best.expect("at least one evaluation");
                let mut decision = Decision::default();
                decision.set(task, actions);
                return Ok(SearchResult { decision, step_time, initial_step_time: initial, evaluations });
            }
            i -= 1;
            actions[i] += 1;
            if actions[i] < space {
                break;
            }
            actions[i] = 0;
        }
    }
}
