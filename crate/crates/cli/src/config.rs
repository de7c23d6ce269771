//! Experiment configuration files. One JSON file describes a whole
//! experiment; relative paths resolve against the file's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use graphopt_core::assign::{parse_tasks, tasks_label, Task, DEFAULT_PRIORITY_LEVELS};
use graphopt_core::baselines::{SaConfig, DEFAULT_BRUTE_LIMIT};
use graphopt_core::cost::{load_topology, DeviceTopology, TopologyFile};
use graphopt_core::fusion::FusionConfig;
use graphopt_core::graph::{load_graph, ComputationGraph};
use graphopt_core::workload::{gen_workload, Family, WorkloadSpec};
use graphopt_policy::{PolicyConfig, PpoHyper};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rl,
    Sa,
    Fifo,
    Fanout,
    Greedy,
    Brute,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rl => "rl",
            Method::Sa => "sa",
            Method::Fifo => "fifo",
            Method::Fanout => "fanout",
            Method::Greedy => "greedy",
            Method::Brute => "brute",
        }
    }

    /// Whether the method can optimise exactly this task set.
    pub fn supports(self, tasks: &[Task]) -> bool {
        match self {
            Method::Rl | Method::Sa => !tasks.is_empty(),
            Method::Fifo | Method::Fanout => tasks == [Task::Schedule],
            Method::Greedy => tasks == [Task::Placement],
            Method::Brute => tasks.len() == 1,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| format!("unknown method {s:?}; expected rl, sa, fifo, fanout, greedy or brute"))
    }
}

/// A graph file or a generator spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSource {
    Path { path: PathBuf },
    Spec(WorkloadSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySource {
    Path(PathBuf),
    Inline(TopologyFile),
}

/// Overrides for every method's knobs; absent fields keep their defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub policy: PolicyConfig,
    pub ppo: PpoHyper,
    /// Training steps for rl, pretrain and finetune.
    pub steps: usize,
    pub sa: SaConfig,
    pub brute_limit: u64,
    pub priority_levels: usize,
    pub fusion: FusionConfig,
    /// Start rl from this policy checkpoint instead of fresh weights.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            policy: PolicyConfig::default(),
            ppo: PpoHyper::default(),
            steps: 100,
            sa: SaConfig::default(),
            brute_limit: DEFAULT_BRUTE_LIMIT,
            priority_levels: DEFAULT_PRIORITY_LEVELS,
            fusion: FusionConfig::default(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graphs: Vec<GraphSource>,
    pub topology: TopologySource,
    /// `pl+sch+fu` style task list.
    pub tasks: String,
    pub method: Method,
    #[serde(default)]
    pub hyper: Hyper,
    /// Empty means the global seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

/// A loaded graph with the labels result rows carry.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub label: String,
    pub family: Option<Family>,
    pub graph: ComputationGraph,
}

impl LoadedGraph {
    pub fn family_label(&self) -> &'static str {
        self.family.map_or("custom", Family::name)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Reads a config and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for g in &mut self.graphs {
            if let GraphSource::Path { path } = g {
                fix(path);
            }
        }
        if let TopologySource::Path(p) = &mut self.topology {
            fix(p);
        }
        if let Some(p) = &mut self.hyper.checkpoint {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    /// Parsed task list, checked against the method.
    pub fn task_list(&self) -> Result<Vec<Task>, CliError> {
        let tasks = parse_tasks(&self.tasks).map_err(|e| CliError::Validation(e.to_string()))?;
        if tasks.is_empty() {
            return Err(CliError::Validation("no tasks given".into()));
        }
        if !self.method.supports(&tasks) {
            return Err(CliError::Validation(format!(
                "method {} cannot optimise tasks {}",
                self.method,
                tasks_label(&tasks)
            )));
        }
        Ok(tasks)
    }

    pub fn validate(&self) -> Result<Vec<Task>, CliError> {
        let tasks = self.task_list()?;
        if self.graphs.is_empty() {
            return Err(CliError::Validation("no graphs given".into()));
        }
        if self.hyper.priority_levels == 0 {
            return Err(CliError::Validation("priority_levels must be positive".into()));
        }
        self.hyper.policy.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.hyper.ppo.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(tasks)
    }

    /// Configured seeds, or `[fallback]` when none are listed.
    pub fn seeds_or(&self, fallback: u64) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![fallback]
        } else {
            self.seeds.clone()
        }
    }

    pub fn load_topology(&self) -> Result<DeviceTopology, CliError> {
        match &self.topology {
            TopologySource::Path(p) => load_topology(p).map_err(|e| CliError::Validation(e.to_string())),
            TopologySource::Inline(file) => {
                file.clone().into_topology().map_err(|e| CliError::Validation(e.to_string()))
            }
        }
    }

    pub fn load_graphs(&self) -> Result<Vec<LoadedGraph>, CliError> {
        self.graphs
            .iter()
            .map(|src| match src {
                GraphSource::Path { path } => {
                    let graph = load_graph(path).map_err(|e| CliError::Validation(e.to_string()))?;
                    Ok(LoadedGraph { label: graph.name().to_owned(), family: None, graph })
                }
                GraphSource::Spec(spec) => {
                    let graph = gen_workload(spec).map_err(|e| CliError::Validation(e.to_string()))?;
                    Ok(LoadedGraph { label: spec.label(), family: Some(spec.family), graph })
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(method: &str, tasks: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{"graphs": [{{"family": "grid-rnn", "layers": 1, "steps": 2}}],
                "topology": {{"devices": [{{"id": 0, "peak_flops": 1e12, "mem_bw": 1e11, "mem_capacity": 1e10}}],
                              "uniform_bandwidth": 1e9}},
                "tasks": "{tasks}", "method": "{method}", "output_dir": "out"}}"#
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    #[test]
    fn method_task_compatibility() {
        assert!(config("fanout", "sch").validate().is_ok());
        assert!(matches!(config("fanout", "placement").validate(), Err(CliError::Validation(_))));
        assert!(config("greedy", "pl").validate().is_ok());
        assert!(config("greedy", "pl+sch").validate().is_err());
        assert!(config("brute", "fu").validate().is_ok());
        assert!(config("brute", "pl+fu").validate().is_err());
        assert_eq!(config("rl", "fu+pl+sch").validate().unwrap(), Task::ALL.to_vec());
        assert!(config("rl", "").validate().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_the_config() {
        let mut c = config("sa", "pl");
        c.graphs.push(GraphSource::Path { path: "g.json".into() });
        c.resolve(Path::new("/exp"));
        assert_eq!(c.output_dir, PathBuf::from("/exp/out"));
        assert_eq!(c.graphs[1], GraphSource::Path { path: "/exp/g.json".into() });
    }

    #[test]
    fn seeds_fall_back() {
        let mut c = config("sa", "pl");
        assert_eq!(c.seeds_or(7), vec![7]);
        c.seeds = vec![1, 2];
        assert_eq!(c.seeds_or(7), vec![1, 2]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Rl, Method::Sa, Method::Fifo, Method::Fanout, Method::Greedy, Method::Brute] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("hdp".parse::<Method>().is_err());
    }
}
