//! Action sampling and the iterative non-autoregressive decision loop.

use graphopt_core::assign::Task;
use graphopt_core::eval::Decision;
use graphopt_core::graph::ComputationGraph;
use graphopt_tensor::tape::log_softmax_rows;
use graphopt_tensor::{Tape, Tensor};
use rand::Rng;

use crate::net::{ForwardOptions, GraphContext, Policy};

/// Per-row categorical draw from `softmax(logits / temperature)`.
/// Temperature 0 takes the row argmax, lowest index on ties. Log-probs are
/// always those of the untempered policy `softmax(logits)`.
pub fn sample_actions<R: Rng>(logits: &Tensor, temperature: f64, rng: &mut R) -> (Vec<usize>, Vec<f64>) {
    assert!(temperature >= 0.0, "temperature must be non-negative");
    let logp = log_softmax_rows(logits);
    let tempered = if temperature > 0.0 && temperature != 1.0 {
        log_softmax_rows(&logits.map(|x| x / temperature))
    } else {
        logp.clone()
    };
    let mut actions = Vec::with_capacity(logits.rows());
    let mut log_probs = Vec::with_capacity(logits.rows());
    for r in 0..logits.rows() {
        let a = if temperature == 0.0 {
            argmax(logits.row(r))
        } else {
            categorical(tempered.row(r), rng)
        };
        actions.push(a);
        log_probs.push(logp.get(r, a));
    }
    (actions, log_probs)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from log-probabilities.
fn categorical<R: Rng>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    // Rounding left the total just under one.
    log_probs.len() - 1
}

/// One task's decision; every per-node field is indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDecision {
    pub task: Task,
    /// `N x a_T`.
    pub logits: Tensor,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskActionBundle {
    pub tasks: Vec<TaskDecision>,
    pub value: f64,
}

impl TaskActionBundle {
    pub fn joint_log_prob(&self) -> f64 {
        self.tasks.iter().flat_map(|t| &t.log_probs).sum()
    }

    pub fn actions(&self) -> Vec<Vec<usize>> {
        self.tasks.iter().map(|t| t.actions.clone()).collect()
    }

    pub fn decision(&self) -> Decision {
        let mut d = Decision::default();
        for t in &self.tasks {
            d.set(t.task, t.actions.clone());
        }
        d
    }
}

/// Logits and value of one forward pass, rows by node id.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub logits: Vec<Tensor>,
    pub value: f64,
}

impl Policy {
    /// Forward pass without gradients on the given previous actions.
    pub fn infer(
        &self,
        graph: &ComputationGraph,
        ctx: &GraphContext,
        prev: Option<&[Vec<usize>]>,
        opts: ForwardOptions,
    ) -> PolicyOutput {
        let features = self.features(graph, prev);
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, ctx, &features, opts);
        PolicyOutput {
            logits: out.logits.iter().map(|&l| ctx.rows_by_id(tape.value(l))).collect(),
            value: tape.value(out.value).item(),
        }
    }

    /// Samples every task from one forward pass.
    pub fn decide<R: Rng>(
        &self,
        graph: &ComputationGraph,
        ctx: &GraphContext,
        prev: Option<&[Vec<usize>]>,
        temperature: f64,
        rng: &mut R,
    ) -> TaskActionBundle {
        let out = self.infer(graph, ctx, prev, ForwardOptions::default());
        bundle_from(self, out, temperature, rng)
    }
}

pub(crate) fn bundle_from<R: Rng>(
    policy: &Policy,
    out: PolicyOutput,
    temperature: f64,
    rng: &mut R,
) -> TaskActionBundle {
    let tasks = policy
        .tasks()
        .iter()
        .zip(out.logits)
        .map(|(spec, logits)| {
            let (actions, log_probs) = sample_actions(&logits, temperature, rng);
            TaskDecision { task: spec.task, logits, actions, log_probs }
        })
        .collect();
    TaskActionBundle { tasks, value: out.value }
}

/// `iterations` rounds of decide, each featurised with the previous
/// round's actions (the first with empty action blocks). Returns every
/// round; the last is the decision.
pub fn iterate_decisions<R: Rng>(
    policy: &Policy,
    graph: &ComputationGraph,
    ctx: &GraphContext,
    iterations: usize,
    temperature: f64,
    rng: &mut R,
) -> Vec<TaskActionBundle> {
    assert!(iterations >= 1, "at least one iteration");
    let mut trajectory: Vec<TaskActionBundle> = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let prev = trajectory.last().map(|b| b.actions());
        trajectory.push(policy.decide(graph, ctx, prev.as_deref(), temperature, rng));
    }
    trajectory
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_at_zero_temperature() {
        let logits = Tensor::new(2, 3, vec![10.0, 0.0, 0.0, 1.0, 5.0, 5.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, lp) = sample_actions(&logits, 0.0, &mut rng);
        assert_eq!(a, vec![0, 1]);
        let z: f64 = (10f64.exp() + 2.0).ln();
        assert!((lp[0] - (10.0 - z)).abs() < 1e-12);
    }

    #[test]
    fn fixed_seed_repeats() {
        let logits = Tensor::zeros(50, 4);
        let a = sample_actions(&logits, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_actions(&logits, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn log_probs_match_logits() {
        let logits = Tensor::new(1, 2, vec![0.0, 2f64.ln()]);
        let (a, lp) = sample_actions(&logits, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let expect = if a[0] == 0 { (1.0f64 / 3.0).ln() } else { (2.0f64 / 3.0).ln() };
        assert!((lp[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn low_temperature_concentrates() {
        let logits = Tensor::new(1, 2, vec![0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hits = (0..2000).filter(|_| sample_actions(&logits, 0.05, &mut rng).0[0] == 1).count();
        assert!(hits > 1990);
    }
}
