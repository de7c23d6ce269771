//! Per-node decision vectors for the three optimisation tasks.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of schedule / fusion priority levels.
pub const DEFAULT_PRIORITY_LEVELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Placement,
    Schedule,
    Fusion,
}

impl Task {
    /// Canonical joint order.
    pub const ALL: [Task; 3] = [Task::Placement, Task::Schedule, Task::Fusion];

    pub fn name(self) -> &'static str {
        match self {
            Task::Placement => "placement",
            Task::Schedule => "schedule",
            Task::Fusion => "fusion",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Task::Placement => "pl",
            Task::Schedule => "sch",
            Task::Fusion => "fu",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
#[error("unknown task {0:?}")]
pub struct UnknownTask(pub String);

impl FromStr for Task {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "placement" | "pl" => Ok(Task::Placement),
            "schedule" | "sch" | "schedule_priority" => Ok(Task::Schedule),
            "fusion" | "fu" | "fusion_priority" => Ok(Task::Fusion),
            _ => Err(UnknownTask(s.to_owned())),
        }
    }
}

/// Formats a task list the way result tables do: `pl+sch+fu`.
pub fn tasks_label(tasks: &[Task]) -> String {
    tasks.iter().map(|t| t.short()).collect::<Vec<_>>().join("+")
}

/// Parses `pl+sch`, `placement,fusion` and similar; returns canonical order.
pub fn parse_tasks(s: &str) -> Result<Vec<Task>, UnknownTask> {
    let mut tasks = s
        .split(['+', ',', '|'])
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse())
        .collect::<Result<Vec<Task>, _>>()?;
    tasks.sort();
    tasks.dedup();
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionAssignment {
    pub task: Task,
    pub actions: Vec<usize>,
}

impl ActionAssignment {
    pub fn new(task: Task, actions: Vec<usize>) -> Self {
        Self { task, actions }
    }

    pub fn uniform(task: Task, n: usize, value: usize) -> Self {
        Self { task, actions: vec![value; n] }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum AssignmentIoError {
    #[error("csv: {0}")]
    Csv(String),
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Writes `node_id,task,action` rows.
pub fn write_assignments_csv<W: Write>(
    mut w: W,
    assignments: &[ActionAssignment],
) -> std::io::Result<()> {
    writeln!(w, "node_id,task,action")?;
    for a in assignments {
        for (node, action) in a.actions.iter().enumerate() {
            writeln!(w, "{node},{},{action}", a.task)?;
        }
    }
    Ok(())
}

/// Reads `node_id,task,action` rows into one assignment per task present.
/// Every task present must cover nodes `0..n` exactly once.
pub fn read_assignments_csv<R: Read>(
    mut r: R,
    n: usize,
) -> Result<Vec<ActionAssignment>, AssignmentIoError> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut per_task: Vec<(Task, Vec<Option<usize>>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("node_id")) {
            continue;
        }
        let row = |reason: String| AssignmentIoError::Row { line: line_no, reason };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(row(format!("expected 3 fields, got {}", fields.len())));
        }
        let node: usize = fields[0].parse().map_err(|_| row(format!("bad node id {:?}", fields[0])))?;
        let task: Task = fields[1].parse().map_err(|e: UnknownTask| row(e.to_string()))?;
        let action: usize =
            fields[2].parse().map_err(|_| row(format!("bad action {:?}", fields[2])))?;
        if node >= n {
            return Err(row(format!("node {node} out of range for a graph of {n} nodes")));
        }
        let slot = match per_task.iter().position(|(t, _)| *t == task) {
            Some(p) => p,
            None => {
                per_task.push((task, vec![None; n]));
                per_task.len() - 1
            }
        };
        if per_task[slot].1[node].replace(action).is_some() {
            return Err(row(format!("node {node} assigned twice for {task}")));
        }
    }
    per_task.sort_by_key(|(t, _)| *t);
    per_task
        .into_iter()
        .map(|(task, slots)| {
            let missing = slots.iter().filter(|s| s.is_none()).count();
            if missing > 0 {
                return Err(AssignmentIoError::Csv(format!(
                    "{task}: {missing} of {n} nodes have no action"
                )));
            }
            Ok(ActionAssignment::new(task, slots.into_iter().flatten().collect()))
        })
        .collect()
}
