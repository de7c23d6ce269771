//! Method dispatch for the optimize, pretrain and finetune commands.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use graphopt_core::assign::{tasks_label, write_assignments_csv, ActionAssignment, Task};
use graphopt_core::baselines::{brute_force, fanout_priorities, greedy_placement, simulated_annealing, SaConfig};
use graphopt_core::cost::DeviceTopology;
use graphopt_core::eval::{Decision, Evaluator};
use graphopt_policy::rl::{argmax_decision, write_curve_csv, CurvePoint};
use graphopt_policy::{train, Env, Policy, PolicyCheckpoint, TaskSpec, TrainError, TrainOptions};

use crate::config::{ExperimentConfig, Hyper, LoadedGraph, Method};
use crate::error::CliError;
use crate::report::{write_results, ResultRow};

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::ActionSpace { .. } | TrainError::Hyper(_) | TrainError::HoldoutInTraining(_) => {
            CliError::Validation(e.to_string())
        }
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn evaluator<'a>(graph: &'a LoadedGraph, topology: &'a DeviceTopology, hyper: &Hyper) -> Evaluator<'a> {
    Evaluator::new(&graph.graph, topology).with_priority_levels(hyper.priority_levels).with_fusion(hyper.fusion)
}

pub fn load_policy(path: &Path) -> Result<Policy, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("checkpoint {}: {e}", path.display())))?;
    let ckpt: PolicyCheckpoint = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("checkpoint {}: {e}", path.display())))?;
    Policy::from_checkpoint(&ckpt).map_err(|e| CliError::Validation(e.to_string()))
}

pub fn save_policy(policy: &Policy, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string(&policy.to_checkpoint()).map_err(|e| CliError::io("checkpoint", e))?;
    std::fs::write(path, text).map_err(|e| CliError::io(&path.display().to_string(), e))
}

/// Result of one method on one graph.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub decision: Decision,
    /// Infinite when nothing valid was found.
    pub step_time: f64,
    pub curve: Vec<CurvePoint>,
}

/// Runs `method` on `eval`. `policy` seeds rl; otherwise a fresh policy is
/// built from `hyper.policy`.
pub fn run_method(
    eval: &Evaluator<'_>,
    tasks: &[Task],
    method: Method,
    hyper: &Hyper,
    seed: u64,
    policy: Option<Policy>,
) -> Result<MethodRun, CliError> {
    let graph = eval.graph();
    let fixed = |decision: Decision| {
        let step_time = eval.cost(&decision);
        Ok(MethodRun { decision, step_time, curve: Vec::new() })
    };
    match method {
        Method::Fifo => fixed(Decision::default()),
        Method::Fanout => {
            let mut d = Decision::default();
            d.set(Task::Schedule, fanout_priorities(graph, eval.action_space(Task::Schedule)).actions);
            fixed(d)
        }
        Method::Greedy => {
            let mut d = Decision::default();
            d.set(Task::Placement, greedy_placement(graph, eval.topology()).actions);
            fixed(d)
        }
        Method::Brute => {
            let r = brute_force(eval, tasks[0], hyper.brute_limit).map_err(|e| CliError::Validation(e.to_string()))?;
            Ok(MethodRun { decision: r.decision, step_time: r.step_time, curve: Vec::new() })
        }
        Method::Sa => {
            let r = simulated_annealing(eval, tasks, &SaConfig { seed, ..hyper.sa });
            Ok(MethodRun { decision: r.decision, step_time: r.step_time, curve: Vec::new() })
        }
        Method::Rl => {
            let mut policy = match policy {
                Some(p) => p,
                None => Policy::new(hyper.policy.clone(), &TaskSpec::for_tasks(eval, tasks), seed)
                    .map_err(|e| CliError::Validation(e.to_string()))?,
            };
            if policy.tasks().iter().map(|t| t.task).ne(tasks.iter().copied()) {
                return Err(CliError::Validation(format!(
                    "policy was built for tasks {}, config asks for {}",
                    tasks_label(&policy.tasks().iter().map(|t| t.task).collect::<Vec<_>>()),
                    tasks_label(tasks)
                )));
            }
            let env = Env::new(eval.clone(), policy.config()).map_err(train_error)?;
            let out = train(&mut policy, std::slice::from_ref(&env), &hyper.ppo, hyper.steps, seed, &TrainOptions::default())
                .map_err(train_error)?;
            match &out.best[0] {
                Some(b) => Ok(MethodRun { decision: b.decision.clone(), step_time: b.step_time, curve: out.curve }),
                None => Ok(MethodRun { decision: Decision::default(), step_time: f64::INFINITY, curve: out.curve }),
            }
        }
    }
}

/// Assignments for `tasks`, filling any task the decision leaves out with
/// the evaluator's default.
pub fn assignments(eval: &Evaluator<'_>, decision: &Decision, tasks: &[Task]) -> Vec<ActionAssignment> {
    tasks
        .iter()
        .map(|&t| {
            let actions = decision.get(t).map_or_else(|| eval.default_actions(t), <[usize]>::to_vec);
            ActionAssignment::new(t, actions)
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(&path.display().to_string(), e))
}

fn run_stem(graph: &LoadedGraph, method: &str, tasks: &[Task], seed: u64) -> String {
    format!("{}.{}.{}.seed{}", graph.label, method, tasks_label(tasks), seed)
}

fn prepare_output(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(&dir.display().to_string(), e))
}

struct Writer<'a> {
    dir: &'a Path,
    rows: Vec<ResultRow>,
}

impl Writer<'_> {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        graph: &LoadedGraph,
        eval: &Evaluator<'_>,
        tasks: &[Task],
        method: &str,
        seed: u64,
        run: &MethodRun,
        wall_clock: f64,
    ) -> Result<(), CliError> {
        let stem = run_stem(graph, method, tasks, seed);
        let path = self.dir.join(format!("{stem}.assign.csv"));
        write_assignments_csv(create(&path)?, &assignments(eval, &run.decision, tasks))
            .map_err(|e| CliError::io(&path.display().to_string(), e))?;
        if !run.curve.is_empty() {
            let path = self.dir.join(format!("{stem}.curve.csv"));
            write_curve_csv(create(&path)?, &run.curve, &[graph.label.clone()])
                .map_err(|e| CliError::io(&path.display().to_string(), e))?;
        }
        let baseline_time = eval.baseline().step_time;
        self.rows.push(ResultRow {
            graph: graph.label.clone(),
            family: graph.family_label().to_owned(),
            method: method.to_owned(),
            tasks: tasks_label(tasks),
            step_time: run.step_time,
            baseline_time,
            speedup: ResultRow::speedup_of(run.step_time, baseline_time),
            wall_clock,
            seed,
        });
        Ok(())
    }

    fn finish(self) -> Result<(PathBuf, Vec<ResultRow>), CliError> {
        let path = self.dir.join("results.csv");
        write_results(create(&path)?, &self.rows)?;
        Ok((path, self.rows))
    }
}

/// Runs the configured method on every (graph, seed) and writes
/// `results.csv` plus one assignment file per run into the output dir.
pub fn optimize(cfg: &ExperimentConfig, seed: u64) -> Result<(PathBuf, Vec<ResultRow>), CliError> {
    let tasks = cfg.validate()?;
    let topology = cfg.load_topology()?;
    let graphs = cfg.load_graphs()?;
    let start_policy = cfg.hyper.checkpoint.as_deref().map(load_policy).transpose()?;
    if start_policy.is_some() && cfg.method != Method::Rl {
        return Err(CliError::Validation("a checkpoint only applies to method rl".into()));
    }
    prepare_output(&cfg.output_dir)?;
    let mut out = Writer { dir: &cfg.output_dir, rows: Vec::new() };
    for graph in &graphs {
        let eval = evaluator(graph, &topology, &cfg.hyper);
        for s in cfg.seeds_or(seed) {
            let t0 = Instant::now();
            let run = run_method(&eval, &tasks, cfg.method, &cfg.hyper, s, start_policy.clone())?;
            out.record(graph, &eval, &tasks, cfg.method.name(), s, &run, t0.elapsed().as_secs_f64())?;
        }
    }
    out.finish()
}

/// Trains one policy on every configured graph at once and saves it.
pub fn pretrain(cfg: &ExperimentConfig, seed: u64, checkpoint: Option<&Path>) -> Result<PathBuf, CliError> {
    let tasks = cfg.validate()?;
    if cfg.method != Method::Rl {
        return Err(CliError::Validation(format!("pretrain needs method rl, not {}", cfg.method)));
    }
    let topology = cfg.load_topology()?;
    let graphs = cfg.load_graphs()?;
    let evals: Vec<Evaluator<'_>> = graphs.iter().map(|g| evaluator(g, &topology, &cfg.hyper)).collect();
    let mut policy = match cfg.hyper.checkpoint.as_deref() {
        Some(p) => load_policy(p)?,
        None => Policy::new(cfg.hyper.policy.clone(), &TaskSpec::for_tasks(&evals[0], &tasks), seed)
            .map_err(|e| CliError::Validation(e.to_string()))?,
    };
    let envs = evals
        .into_iter()
        .zip(&graphs)
        .map(|(e, g)| {
            let env = Env::new(e, policy.config()).map_err(train_error)?;
            Ok(match g.family {
                Some(f) => env.with_family(f),
                None => env,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let options = TrainOptions { eval_argmax: false, ..TrainOptions::default() };
    let outcome = train(&mut policy, &envs, &cfg.hyper.ppo, cfg.hyper.steps, seed, &options).map_err(train_error)?;

    prepare_output(&cfg.output_dir)?;
    let curve = cfg.output_dir.join("pretrain.curve.csv");
    let names: Vec<String> = graphs.iter().map(|g| g.label.clone()).collect();
    write_curve_csv(create(&curve)?, &outcome.curve, &names).map_err(|e| CliError::io("curve csv", e))?;
    let path = checkpoint.map_or_else(|| cfg.output_dir.join("policy.json"), Path::to_path_buf);
    save_policy(&policy, &path)?;
    Ok(path)
}

/// Zero-shot and fine-tuned rows for every configured graph, starting from
/// a pretrained checkpoint.
pub fn finetune(
    cfg: &ExperimentConfig,
    seed: u64,
    checkpoint: &Path,
) -> Result<(PathBuf, Vec<ResultRow>), CliError> {
    let tasks = cfg.validate()?;
    if cfg.method != Method::Rl {
        return Err(CliError::Validation(format!("finetune needs method rl, not {}", cfg.method)));
    }
    let pretrained = load_policy(checkpoint)?;
    let topology = cfg.load_topology()?;
    let graphs = cfg.load_graphs()?;
    prepare_output(&cfg.output_dir)?;
    let mut out = Writer { dir: &cfg.output_dir, rows: Vec::new() };
    for graph in &graphs {
        let eval = evaluator(graph, &topology, &cfg.hyper);
        let env = Env::new(eval.clone(), pretrained.config()).map_err(train_error)?;
        for s in cfg.seeds_or(seed) {
            let t0 = Instant::now();
            let decision = argmax_decision(&pretrained, &env);
            let zero = MethodRun { step_time: env.cost(&decision), decision, curve: Vec::new() };
            out.record(graph, &eval, &tasks, "rl-zeroshot", s, &zero, t0.elapsed().as_secs_f64())?;
            let t0 = Instant::now();
            let tuned = run_method(&eval, &tasks, Method::Rl, &cfg.hyper, s, Some(pretrained.clone()))?;
            out.record(graph, &eval, &tasks, "rl-finetune", s, &tuned, t0.elapsed().as_secs_f64())?;
        }
    }
    out.finish()
}
