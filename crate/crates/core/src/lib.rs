//! Computation graphs, an analytical cost model, a dataflow simulator and
//! the search baselines built on top of them.

pub mod assign;
pub mod baselines;
pub mod cost;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod graph;
pub mod sim;
pub mod workload;

pub use assign::{ActionAssignment, Task, DEFAULT_PRIORITY_LEVELS};
pub use cost::{DeviceSpec, DeviceTopology, LinkSpec, OpCost};
pub use eval::{Decision, Evaluator};
pub use fusion::{apply_fusion, FusedGraph, FusionConfig};
pub use graph::{ComputationGraph, OpNode, OpType, TensorEdge};
pub use sim::{simulate, SchedulePolicy, SimResult, Violation};
pub use workload::{gen_workload, Family, WorkloadSpec};
