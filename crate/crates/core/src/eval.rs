//! Decision evaluation: fusion, then simulation, with defaults for any task
//! left unoptimised.

use crate::assign::{ActionAssignment, Task, DEFAULT_PRIORITY_LEVELS};
use crate::baselines::greedy_placement;
use crate::cost::DeviceTopology;
use crate::fusion::{apply_fusion, FusedGraph, FusionConfig};
use crate::graph::ComputationGraph;
use crate::sim::{simulate, SchedulePolicy, SimError, SimResult};

/// Per-task action vectors. `None` means the task keeps the evaluator's
/// default: greedy placement, FIFO scheduling and no fusion unless replaced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Decision {
    pub placement: Option<Vec<usize>>,
    pub schedule: Option<Vec<usize>>,
    pub fusion: Option<Vec<usize>>,
}

impl Decision {
    pub fn get(&self, task: Task) -> Option<&[usize]> {
        match task {
            Task::Placement => self.placement.as_deref(),
            Task::Schedule => self.schedule.as_deref(),
            Task::Fusion => self.fusion.as_deref(),
        }
    }

    pub fn set(&mut self, task: Task, actions: Vec<usize>) {
        let slot = match task {
            Task::Placement => &mut self.placement,
            Task::Schedule => &mut self.schedule,
            Task::Fusion => &mut self.fusion,
        };
        *slot = Some(actions);
    }

    pub fn from_assignments(assignments: impl IntoIterator<Item = ActionAssignment>) -> Self {
        let mut d = Decision::default();
        for a in assignments {
            d.set(a.task, a.actions);
        }
        d
    }

    /// Present tasks in canonical order.
    pub fn to_assignments(&self) -> Vec<ActionAssignment> {
        Task::ALL
            .iter()
            .filter_map(|&t| self.get(t).map(|a| ActionAssignment::new(t, a.to_vec())))
            .collect()
    }
}

/// Evaluates decisions for one graph on one topology.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    graph: &'a ComputationGraph,
    topology: &'a DeviceTopology,
    fusion: FusionConfig,
    priority_levels: usize,
    default_placement: Vec<usize>,
    default_schedule: Option<Vec<usize>>,
    default_fusion: Option<Vec<usize>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(graph: &'a ComputationGraph, topology: &'a DeviceTopology) -> Self {
        Self {
            graph,
            topology,
            fusion: FusionConfig::default(),
            priority_levels: DEFAULT_PRIORITY_LEVELS,
            default_placement: greedy_placement(graph, topology).actions,
            default_schedule: None,
            default_fusion: None,
        }
    }

    pub fn with_fusion(mut self, fusion: FusionConfig) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn with_priority_levels(mut self, levels: usize) -> Self {
        assert!(levels >= 1, "at least one priority level");
        self.priority_levels = levels;
        self
    }

    /// Replaces the placement used when a decision carries none.
    pub fn with_default_placement(mut self, placement: Vec<usize>) -> Self {
        assert_eq!(placement.len(), self.graph.len(), "one device per node");
        self.default_placement = placement;
        self
    }

    /// Fixed priorities (scheduled with the priority policy) for decisions
    /// carrying no schedule.
    pub fn with_default_schedule(mut self, priorities: Vec<usize>) -> Self {
        assert_eq!(priorities.len(), self.graph.len(), "one priority per node");
        self.default_schedule = Some(priorities);
        self
    }

    /// Fixed fusion priorities for decisions carrying none.
    pub fn with_default_fusion(mut self, priorities: Vec<usize>) -> Self {
        assert_eq!(priorities.len(), self.graph.len(), "one priority per node");
        self.default_fusion = Some(priorities);
        self
    }

    pub fn graph(&self) -> &'a ComputationGraph {
        self.graph
    }

    pub fn topology(&self) -> &'a DeviceTopology {
        self.topology
    }

    pub fn default_placement(&self) -> &[usize] {
        &self.default_placement
    }

    /// Number of actions per node for `task`.
    pub fn action_space(&self, task: Task) -> usize {
        match task {
            Task::Placement => self.topology.len(),
            Task::Schedule | Task::Fusion => self.priority_levels,
        }
    }

    /// The default actions the searches start from.
    pub fn default_actions(&self, task: Task) -> Vec<usize> {
        match task {
            Task::Placement => self.default_placement.clone(),
            Task::Schedule => self.default_schedule.clone().unwrap_or_else(|| vec![0; self.graph.len()]),
            Task::Fusion => self.default_fusion.clone().unwrap_or_else(|| vec![0; self.graph.len()]),
        }
    }

    pub fn evaluate(&self, decision: &Decision, trace: bool) -> Result<SimResult, SimError> {
        let n = self.graph.len();
        let placement = decision.placement.as_deref().unwrap_or(&self.default_placement);
        let fused = match decision.fusion.as_deref().or(self.default_fusion.as_deref()) {
            Some(p) if p.len() != n => {
                return Err(SimError::Length { what: "fusion priorities", got: p.len(), n })
            }
            Some(p) => apply_fusion(self.graph, p, &self.fusion),
            None => FusedGraph::unfused(self.graph),
        };
        let fifo = vec![0; n];
        let (priorities, policy) = match decision.schedule.as_deref().or(self.default_schedule.as_deref()) {
            Some(p) => (p, SchedulePolicy::Priority),
            None => (fifo.as_slice(), SchedulePolicy::Fifo),
        };
        simulate(&fused, placement, priorities, self.topology, policy, trace)
    }

    /// Step time, or infinity for invalid or malformed decisions.
    pub fn cost(&self, decision: &Decision) -> f64 {
        match self.evaluate(decision, false) {
            Ok(r) if r.valid => r.step_time,
            _ => f64::INFINITY,
        }
    }

    /// Result of the all-default decision.
    pub fn baseline(&self) -> SimResult {
        self.evaluate(&Decision::default(), false).expect("default decision is well formed")
    }
}
