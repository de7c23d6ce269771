//! Event-driven execution of a fused graph on a device topology.
//!
//! Each device runs one group at a time from its ready queue. Every ordered
//! device pair has one link that carries transfers one after another in
//! enqueue order; transfers overlap with compute. A group is ready once all
//! of its producers' outputs have arrived on its device.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{kernel_time, DeviceTopology};
use crate::fusion::FusedGraph;
use crate::graph::ComputationGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePolicy {
    Fifo,
    Priority,
}

impl FromStr for SchedulePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fifo" => Ok(SchedulePolicy::Fifo),
            "priority" => Ok(SchedulePolicy::Priority),
            other => Err(format!("unknown scheduling policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    Oom,
    Colocation,
    /// Externally supplied groups whose contraction is cyclic. The greedy
    /// fusion pass never produces these.
    CycleAfterFusion,
    OutOfRange,
}

impl Violation {
    pub fn name(self) -> &'static str {
        match self {
            Violation::Oom => "oom",
            Violation::Colocation => "colocation",
            Violation::CycleAfterFusion => "cycle_after_fusion",
            Violation::OutOfRange => "out_of_range",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("{what} has {got} entries, graph has {n} nodes")]
    Length { what: &'static str, got: usize, n: usize },
    #[error("node {node}: device {device} outside a topology of {devices} devices")]
    DeviceOutOfRange { node: usize, device: usize, devices: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Compute,
    Transfer,
}

/// One busy interval. Transfers are attributed to the source device and the
/// producing group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub start: f64,
    pub end: f64,
    pub device: usize,
    pub kind: EventKind,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub step_time: f64,
    pub valid: bool,
    pub violation: Option<Violation>,
    pub per_device_busy: Vec<f64>,
    pub peak_mem: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEvent>>,
}

/// Writes trace rows sorted by start time.
pub fn write_trace_csv<W: Write>(mut w: W, trace: &[TraceEvent]) -> std::io::Result<()> {
    let mut rows = trace.to_vec();
    rows.sort_by(|a, b| a.start.total_cmp(&b.start));
    writeln!(w, "time_start,time_end,device,kind,group_id")?;
    for e in rows {
        let kind = match e.kind {
            EventKind::Compute => "compute",
            EventKind::Transfer => "transfer",
        };
        writeln!(w, "{},{},{},{},{}", e.start, e.end, e.device, kind, e.group)?;
    }
    Ok(())
}

/// Static placement checks: device range and colocation groups.
pub fn check_validity(
    graph: &ComputationGraph,
    placement: &[usize],
    topology: &DeviceTopology,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if placement.len() != graph.len() || placement.iter().any(|&d| d >= topology.len()) {
        out.push(Violation::OutOfRange);
    }
    if colocation_violated(graph, placement) {
        out.push(Violation::Colocation);
    }
    out
}

fn colocation_violated(graph: &ComputationGraph, placement: &[usize]) -> bool {
    let mut seen: Vec<(&str, usize)> = Vec::new();
    for node in graph.nodes() {
        let (Some(tag), Some(&device)) = (node.colocate.as_deref(), placement.get(node.id)) else {
            continue;
        };
        match seen.iter().find(|(t, _)| *t == tag) {
            Some(&(_, d)) if d != device => return true,
            Some(_) => {}
            None => seen.push((tag, device)),
        }
    }
    false
}

#[derive(Debug, Clone, Copy)]
struct Ready {
    priority: usize,
    since: f64,
    topo: usize,
    group: usize,
}

impl PartialEq for Ready {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ready {}

impl PartialOrd for Ready {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ready {
    // Max-heap: higher priority, then earlier ready time, then lower topo index.
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .cmp(&other.priority)
            .then_with(|| other.since.total_cmp(&self.since))
            .then_with(|| other.topo.cmp(&self.topo))
    }
}

#[derive(Debug, Clone, Copy)]
enum Event {
    ComputeDone { group: usize },
    TransferDone { link: usize, edge: usize },
}

#[derive(Debug, Clone, Copy)]
struct Timed {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Timed {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Timed {}

impl PartialOrd for Timed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timed {
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Runs the graph.
///
/// `placement` and `priorities` are per original node; a group takes the
/// values of its lowest-id member. Under [`SchedulePolicy::Priority`] the
/// highest priority ready group runs first, then the one ready longest, then
/// the lowest topological index; under FIFO priorities are ignored. With all
/// priorities equal both policies produce the same trace.
pub fn simulate(
    fg: &FusedGraph<'_>,
    placement: &[usize],
    priorities: &[usize],
    topology: &DeviceTopology,
    policy: SchedulePolicy,
    record_trace: bool,
) -> Result<SimResult, SimError> {
    let graph = fg.graph();
    let n = graph.len();
    if placement.len() != n {
        return Err(SimError::Length { what: "placement", got: placement.len(), n });
    }
    if priorities.len() != n {
        return Err(SimError::Length { what: "priorities", got: priorities.len(), n });
    }
    if let Some((node, &device)) = placement.iter().enumerate().find(|(_, &d)| d >= topology.len())
    {
        return Err(SimError::DeviceOutOfRange { node, device, devices: topology.len() });
    }

    let groups = fg.len();
    let devices = topology.len();
    let device_of: Vec<usize> = fg.groups().iter().map(|g| placement[g.leader()]).collect();
    let priority_of: Vec<usize> = match policy {
        SchedulePolicy::Priority => fg.groups().iter().map(|g| priorities[g.leader()]).collect(),
        SchedulePolicy::Fifo => vec![0; groups],
    };
    let mut topo_index = vec![0; groups];
    for (i, &g) in fg.topo_order().iter().enumerate() {
        topo_index[g] = i;
    }

    let mut pending: Vec<usize> = (0..groups).map(|g| fg.in_edges(g).len()).collect();
    let mut consumers_left: Vec<usize> = (0..groups).map(|g| fg.out_edges(g).len()).collect();
    let mut queues: Vec<BinaryHeap<Ready>> = vec![BinaryHeap::new(); devices];
    let mut device_idle = vec![true; devices];
    let mut link_queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); devices * devices];
    let mut link_idle = vec![true; devices * devices];
    let mut events: BinaryHeap<Timed> = BinaryHeap::new();
    let mut seq = 0u64;

    let mut busy = vec![0.0; devices];
    let mut resident = vec![0.0f64; devices];
    let mut peak = vec![0.0f64; devices];
    let mut trace = record_trace.then(Vec::new);
    let mut step_time = 0.0f64;

    let make_ready = |g: usize, t: f64, queues: &mut Vec<BinaryHeap<Ready>>| {
        queues[device_of[g]].push(Ready {
            priority: priority_of[g],
            since: t,
            topo: topo_index[g],
            group: g,
        });
    };

    for &g in fg.topo_order() {
        if pending[g] == 0 {
            make_ready(g, 0.0, &mut queues);
        }
    }

    let mut now = 0.0;
    loop {
        // Start work on every idle device and link.
        for d in 0..devices {
            if !device_idle[d] {
                continue;
            }
            if let Some(r) = queues[d].pop() {
                let g = r.group;
                let dt = kernel_time(fg.group(g).cost, topology.device(d));
                device_idle[d] = false;
                busy[d] += dt;
                if let Some(trace) = trace.as_mut() {
                    trace.push(TraceEvent {
                        start: now,
                        end: now + dt,
                        device: d,
                        kind: EventKind::Compute,
                        group: g,
                    });
                }
                events.push(Timed { time: now + dt, seq, event: Event::ComputeDone { group: g } });
                seq += 1;
            }
        }
        for link in 0..devices * devices {
            if !link_idle[link] {
                continue;
            }
            if let Some(edge) = link_queues[link].pop_front() {
                let (src, dst) = (link / devices, link % devices);
                let e = fg.edges()[edge];
                let dt = topology.transfer_time(e.bytes, src, dst);
                link_idle[link] = false;
                if let Some(trace) = trace.as_mut() {
                    trace.push(TraceEvent {
                        start: now,
                        end: now + dt,
                        device: src,
                        kind: EventKind::Transfer,
                        group: e.src,
                    });
                }
                events.push(Timed { time: now + dt, seq, event: Event::TransferDone { link, edge } });
                seq += 1;
            }
        }

        let Some(first) = events.pop() else { break };
        now = first.time;
        let mut batch = vec![first];
        while events.peek().is_some_and(|e| e.time == now) {
            batch.push(events.pop().expect("peeked"));
        }
        for timed in batch {
            match timed.event {
                Event::ComputeDone { group: g } => {
                    let d = device_of[g];
                    device_idle[d] = true;
                    step_time = step_time.max(now);
                    resident[d] += fg.group(g).out_bytes;
                    peak[d] = peak[d].max(resident[d]);
                    for &e in fg.in_edges(g) {
                        let p = fg.edges()[e].src;
                        consumers_left[p] -= 1;
                        if consumers_left[p] == 0 {
                            resident[device_of[p]] -= fg.group(p).out_bytes;
                        }
                    }
                    for &e in fg.out_edges(g) {
                        let h = fg.edges()[e].dst;
                        if device_of[h] == d {
                            pending[h] -= 1;
                            if pending[h] == 0 {
                                make_ready(h, now, &mut queues);
                            }
                        } else {
                            link_queues[d * devices + device_of[h]].push_back(e);
                        }
                    }
                }
                Event::TransferDone { link, edge } => {
                    link_idle[link] = true;
                    let h = fg.edges()[edge].dst;
                    pending[h] -= 1;
                    if pending[h] == 0 {
                        make_ready(h, now, &mut queues);
                    }
                }
            }
        }
    }
    debug_assert!(pending.iter().all(|&p| p == 0), "acyclic group graph drains fully");

    let violation = if colocation_violated(graph, placement) {
        Some(Violation::Colocation)
    } else if (0..devices).any(|d| peak[d] > topology.device(d).mem_capacity) {
        Some(Violation::Oom)
    } else {
        None
    };
    Ok(SimResult {
        step_time,
        valid: violation.is_none(),
        violation,
        per_device_busy: busy,
        peak_mem: peak,
        trace,
    })
}
