use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graphopt_cli::report::read_results;
use tempfile::TempDir;

fn graphopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphopt"))
        .args(args)
        .env_remove("GRAPHOPT_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TWO_NODES: &str = r#"{"name": "pair",
  "nodes": [{"id": 0, "op": "matmul", "flops": 2e9, "out_bytes": 4e6},
            {"id": 1, "op": "relu", "flops": 1e6, "out_bytes": 4e6}],
  "edges": [{"src": 0, "dst": 1}]}"#;

/// Heavy independent pairs; splitting them across devices is optimal.
const FOUR_NODES: &str = r#"{"name": "four",
  "nodes": [{"id": 0, "op": "matmul", "flops": 4e9, "out_bytes": 1e6},
            {"id": 1, "op": "matmul", "flops": 3e9, "out_bytes": 1e6},
            {"id": 2, "op": "matmul", "flops": 1e9, "out_bytes": 1e6},
            {"id": 3, "op": "matmul", "flops": 2e9, "out_bytes": 1e6}],
  "edges": [{"src": 0, "dst": 1}, {"src": 2, "dst": 3}]}"#;

fn topology(devices: usize) -> String {
    let list: Vec<String> = (0..devices)
        .map(|i| format!(r#"{{"id": {i}, "peak_flops": 1e12, "mem_bw": 1e11, "mem_capacity": 1e12}}"#))
        .collect();
    format!(r#"{{"devices": [{}], "uniform_bandwidth": 1e9}}"#, list.join(", "))
}

#[test]
fn gen_writes_the_expected_node_count() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("g.json");
    let o = graphopt(&["gen", "--family", "grid-rnn", "--layers", "2", "--steps", "3", "--seed", "1", "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let g: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    // Four ops per cell of a 2 x 3 grid.
    assert_eq!(g["nodes"].as_array().unwrap().len(), 24);
}

#[test]
fn gen_is_reproducible_and_honours_the_seed_variable() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (dir.path().join("a.json"), dir.path().join("b.json"), dir.path().join("c.json"));
    let args = |p: &Path| ["gen", "--family", "dilated-stack", "--layers", "2", "--steps", "2", "-o", s(p)].map(String::from);
    assert!(graphopt(&[&args(&a)[..], &["--seed".into(), "5".into()]].concat().iter().map(String::as_str).collect::<Vec<_>>()).status.success());
    assert!(graphopt(&[&args(&b)[..], &["--seed".into(), "5".into()]].concat().iter().map(String::as_str).collect::<Vec<_>>()).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_graphopt")).args(args(&c)).env("GRAPHOPT_SEED", "5").output().unwrap();
    assert!(o.status.success());
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&a), read(&c));
}

#[test]
fn gen_without_family_is_a_usage_error() {
    let o = graphopt(&["gen", "--layers", "2", "--steps", "3", "-o", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--family"));
}

#[test]
fn gen_with_bad_params_fails_validation() {
    let dir = TempDir::new().unwrap();
    let o = graphopt(&["gen", "--family", "grid-rnn", "--layers", "0", "--steps", "3", "-o", s(&dir.path().join("g.json"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn simulate_default_on_one_device_is_the_serial_sum() {
    let dir = TempDir::new().unwrap();
    let g = write(dir.path(), "g.json", TWO_NODES);
    let t = write(dir.path(), "t.json", &topology(1));
    let o = graphopt(&["simulate", "--graph", s(&g), "--topology", s(&t)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    // matmul: max(2e9 / 1e12, 4e6 / 1e11); relu reads 4e6 and writes 4e6.
    let expect = 2e-3 + 8e6 / 1e11;
    let got = r["step_time"].as_f64().unwrap();
    assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
    assert_eq!(r["valid"], true);
}

#[test]
fn simulate_trace_rows_are_sorted_by_start() {
    let dir = TempDir::new().unwrap();
    let g = write(dir.path(), "g.json", FOUR_NODES);
    let t = write(dir.path(), "t.json", &topology(2));
    let a = write(dir.path(), "a.csv", "node_id,task,action\n0,placement,1\n1,placement,0\n2,placement,0\n3,placement,1\n");
    let trace = dir.path().join("trace.csv");
    let o = graphopt(&["simulate", "--graph", s(&g), "--topology", s(&t), "--assignments", s(&a), "--trace", s(&trace)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time_start,time_end,device,kind,group_id"));
    let starts: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    // Four kernels and two cross-device transfers.
    assert_eq!(starts.len(), 6);
    assert!(starts.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn simulate_rejects_an_invalid_placement() {
    let dir = TempDir::new().unwrap();
    let g = write(dir.path(), "g.json", TWO_NODES);
    let t = write(dir.path(), "t.json", &topology(2));
    let a = write(dir.path(), "a.csv", "node_id,task,action\n0,placement,0\n1,placement,5\n");
    let o = graphopt(&["simulate", "--graph", s(&g), "--topology", s(&t), "--assignments", s(&a)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("out_of_range"), "{}", stderr(&o));

    let short = write(dir.path(), "short.csv", "node_id,task,action\n0,placement,0\n");
    let o = graphopt(&["simulate", "--graph", s(&g), "--topology", s(&t), "--assignments", s(&short)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains('2'), "{}", stderr(&o));
}

#[test]
fn simulate_reports_memory_overflow_by_name() {
    let dir = TempDir::new().unwrap();
    let g = write(dir.path(), "g.json", TWO_NODES);
    let t = write(
        dir.path(),
        "t.json",
        r#"{"devices": [{"id": 0, "peak_flops": 1e12, "mem_bw": 1e11, "mem_capacity": 1.0}], "uniform_bandwidth": 1e9}"#,
    );
    let o = graphopt(&["simulate", "--graph", s(&g), "--topology", s(&t)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("oom"), "{}", stderr(&o));
}

fn experiment(dir: &Path, graph: &str, method: &str, tasks: &str, hyper: &str) -> PathBuf {
    write(dir, "t.json", &topology(2));
    let text = format!(
        r#"{{"graphs": [{graph}], "topology": "t.json", "tasks": "{tasks}", "method": "{method}",
            "hyper": {hyper}, "seeds": [3], "output_dir": "out"}}"#
    );
    write(dir, "exp.json", &text)
}

#[test]
fn optimize_brute_beats_its_own_baseline() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "g.json", FOUR_NODES);
    let cfg = experiment(dir.path(), r#"{"path": "g.json"}"#, "brute", "pl", "{}");
    let o = graphopt(&["optimize", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_results(&dir.path().join("out/results.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!((r.graph.as_str(), r.method.as_str(), r.tasks.as_str(), r.seed), ("four", "brute", "pl", 3));
    assert!(r.speedup >= 1.0, "{r:?}");
    // Pair {0,1} against pair {2,3}: 7e9 vs 3e9 flops.
    assert!((r.step_time - 7e-3).abs() < 1e-12, "{r:?}");
    assert!(dir.path().join("out/four.brute.pl.seed3.assign.csv").exists());
}

#[test]
fn optimize_rl_joint_writes_one_joint_row() {
    let dir = TempDir::new().unwrap();
    let hyper = r#"{"steps": 2, "policy": {"gs_layers": 1, "gs_dim": 16, "trf_layers": 1, "d_model": 16,
                    "n_head": 2, "d_head": 4, "d_inner": 32, "segment_len": 16},
                    "ppo": {"rollouts": 4, "minibatches": 1, "epochs": 1}}"#;
    let graph = r#"{"family": "multi-branch-cnn", "layers": 1, "steps": 2}"#;
    let cfg = experiment(dir.path(), graph, "rl", "pl+sch+fu", hyper);
    let o = graphopt(&["optimize", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_results(&dir.path().join("out/results.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].tasks.as_str(), rows[0].family.as_str()), ("pl+sch+fu", "multi-branch-cnn"));
    assert!(rows[0].step_time.is_finite());
    let assign = std::fs::read_to_string(dir.path().join(format!("out/{}.rl.pl+sch+fu.seed3.assign.csv", rows[0].graph))).unwrap();
    for task in ["placement", "schedule", "fusion"] {
        assert!(assign.contains(task));
    }
    assert!(dir.path().join(format!("out/{}.rl.pl+sch+fu.seed3.curve.csv", rows[0].graph)).exists());
}

#[test]
fn optimize_rejects_fanout_for_placement() {
    let dir = TempDir::new().unwrap();
    let cfg = experiment(dir.path(), r#"{"family": "grid-rnn", "layers": 1, "steps": 2}"#, "fanout", "placement", "{}");
    let o = graphopt(&["optimize", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fanout"), "{}", stderr(&o));
}

#[test]
fn optimize_reruns_are_identical_apart_from_wall_clock() {
    let dir = TempDir::new().unwrap();
    let hyper = r#"{"sa": {"iterations": 300, "initial_temperature": 0.05, "cooling": 0.99, "moves_per_step": 1, "seed": 0}}"#;
    let cfg = experiment(dir.path(), r#"{"family": "cell-stack-cnn", "layers": 2, "steps": 2}"#, "sa", "pl+fu", hyper);
    let results = dir.path().join("out/results.csv");
    let run = || {
        let o = graphopt(&["optimize", "--config", s(&cfg)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut rows = read_results(&results).unwrap();
        for r in &mut rows {
            r.wall_clock = 0.0;
        }
        let assign = std::fs::read_dir(dir.path().join("out"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.to_str().unwrap().ends_with(".assign.csv"))
            .map(|p| std::fs::read(p).unwrap())
            .collect::<Vec<_>>();
        (rows, assign)
    };
    assert_eq!(run(), run());
}

#[test]
fn report_prints_geomeans_and_writes_csv() {
    let dir = TempDir::new().unwrap();
    let header = "graph,family,method,tasks,step_time,baseline_time,speedup,wall_clock,seed\n";
    let a = write(dir.path(), "a.csv", &format!("{header}g1,grid-rnn,sa,pl,1.0,2.0,2.0,0.1,0\n"));
    let b = write(dir.path(), "b.csv", &format!("{header}g2,dilated-stack,sa,pl,1.0,8.0,8.0,0.1,0\n"));
    let out = dir.path().join("summary.csv");
    let o = graphopt(&["report", s(&a), s(&b), "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    let overall = table.lines().find(|l| l.contains("overall")).unwrap();
    assert!(overall.ends_with("4.000"), "{table}");
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next(), Some("method,tasks,family,runs,geomean_speedup"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn report_on_empty_input_fails() {
    let dir = TempDir::new().unwrap();
    let empty = write(dir.path(), "e.csv", "graph,family,method,tasks,step_time,baseline_time,speedup,wall_clock,seed\n");
    let o = graphopt(&["report", s(&empty)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(graphopt(&["report"]).status.code(), Some(1));
}

#[test]
fn pretrain_then_finetune_round_trips_the_checkpoint() {
    let dir = TempDir::new().unwrap();
    let hyper = r#"{"steps": 2, "policy": {"gs_layers": 1, "gs_dim": 16, "trf_layers": 1, "d_model": 16,
                    "n_head": 2, "d_head": 4, "d_inner": 32, "segment_len": 16},
                    "ppo": {"rollouts": 4, "minibatches": 1, "epochs": 1}}"#;
    let graphs = r#"{"family": "grid-rnn", "layers": 1, "steps": 2}, {"family": "dilated-stack", "layers": 1, "steps": 1}"#;
    let cfg = experiment(dir.path(), graphs, "rl", "pl", hyper);
    let ckpt = dir.path().join("policy.json");
    let o = graphopt(&["pretrain", "--config", s(&cfg), "-o", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/pretrain.curve.csv").exists());

    let o = graphopt(&["finetune", "--config", s(&cfg), "--checkpoint", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_results(&dir.path().join("out/results.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    for pair in rows.chunks(2) {
        assert_eq!((pair[0].method.as_str(), pair[1].method.as_str()), ("rl-zeroshot", "rl-finetune"));
        // Fine-tuning evaluates the zero-shot decision first.
        assert!(pair[1].step_time <= pair[0].step_time);
    }

    // A placement policy for two devices cannot drive a fusion config.
    let bad = experiment(dir.path(), graphs, "rl", "fu", hyper);
    let o = graphopt(&["finetune", "--config", s(&bad), "--checkpoint", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
