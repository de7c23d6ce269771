//! The gen, simulate and report commands; optimize, pretrain and finetune
//! live in [`crate::run`].

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use graphopt_core::assign::{read_assignments_csv, Task};
use graphopt_core::baselines::greedy_placement;
use graphopt_core::cost::load_topology;
use graphopt_core::fusion::{apply_fusion, FusedGraph, FusionConfig};
use graphopt_core::graph::load_graph;
use graphopt_core::sim::{check_validity, simulate, write_trace_csv, SchedulePolicy, SimResult};
use graphopt_core::workload::{gen_workload, WorkloadSpec};

use crate::error::CliError;
use crate::report::{read_results, summarize, write_summary_csv, SummaryRow};

/// Generates a workload and writes it as graph JSON. Returns its node count.
pub fn gen(spec: &WorkloadSpec, output: &Path) -> Result<usize, CliError> {
    let graph = gen_workload(spec).map_err(|e| CliError::Validation(e.to_string()))?;
    graph.save(output).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(graph.len())
}

#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub graph: PathBuf,
    pub topology: PathBuf,
    pub assignments: Option<PathBuf>,
    /// Defaults to priority when a schedule is given, FIFO otherwise.
    pub policy: Option<SchedulePolicy>,
    pub trace: Option<PathBuf>,
    pub max_group: Option<usize>,
}

/// Fuses, simulates and optionally writes the trace. Invalid results are
/// reported as validation errors naming the violation; the result itself
/// is returned alongside so callers can still print it.
pub fn simulate_cmd(args: &SimulateArgs) -> Result<SimResult, (Option<SimResult>, CliError)> {
    let fail = |e: CliError| (None, e);
    let graph = load_graph(&args.graph).map_err(|e| fail(CliError::Validation(e.to_string())))?;
    let topology = load_topology(&args.topology).map_err(|e| fail(CliError::Validation(e.to_string())))?;
    let n = graph.len();
    let given = match &args.assignments {
        Some(p) => {
            let f = File::open(p).map_err(|e| fail(CliError::Validation(format!("{}: {e}", p.display()))))?;
            read_assignments_csv(f, n).map_err(|e| fail(CliError::Validation(format!("{}: {e}", p.display()))))?
        }
        None => Vec::new(),
    };
    let find = |t: Task| given.iter().find(|a| a.task == t).map(|a| a.actions.clone());
    let placement = find(Task::Placement).unwrap_or_else(|| greedy_placement(&graph, &topology).actions);
    let schedule = find(Task::Schedule);
    let policy = args.policy.unwrap_or(if schedule.is_some() { SchedulePolicy::Priority } else { SchedulePolicy::Fifo });
    let priorities = schedule.unwrap_or_else(|| vec![0; n]);

    let static_violations = check_validity(&graph, &placement, &topology);
    if let Some(v) = static_violations.first() {
        return Err(fail(CliError::Validation(format!("invalid placement: {v}"))));
    }
    let fusion = FusionConfig { max_group: args.max_group.unwrap_or(FusionConfig::default().max_group) };
    let fused = match find(Task::Fusion) {
        Some(p) => apply_fusion(&graph, &p, &fusion),
        None => FusedGraph::unfused(&graph),
    };
    let record = args.trace.is_some();
    let result = simulate(&fused, &placement, &priorities, &topology, policy, record)
        .map_err(|e| fail(CliError::Validation(e.to_string())))?;
    if let (Some(path), Some(trace)) = (&args.trace, &result.trace) {
        let w = File::create(path).map(BufWriter::new).map_err(|e| fail(CliError::io(&path.display().to_string(), e)))?;
        write_trace_csv(w, trace).map_err(|e| fail(CliError::io(&path.display().to_string(), e)))?;
    }
    match result.violation {
        Some(v) if !result.valid => Err((Some(result), CliError::Validation(format!("invalid placement: {v}")))),
        _ => Ok(result),
    }
}

/// Merges result CSVs into the summary table; writes it as CSV when asked.
pub fn report(inputs: &[PathBuf], output: Option<&Path>) -> Result<Vec<SummaryRow>, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Usage("report needs at least one results CSV".into()));
    }
    let mut rows = Vec::new();
    for p in inputs {
        rows.extend(read_results(p)?);
    }
    let summary = summarize(&rows)?;
    if let Some(path) = output {
        let w = File::create(path).map(BufWriter::new).map_err(|e| CliError::io(&path.display().to_string(), e))?;
        write_summary_csv(w, &summary)?;
    }
    Ok(summary)
}
