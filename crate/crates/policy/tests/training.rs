use graphopt_core::assign::Task;
use graphopt_core::baselines::brute_force;
use graphopt_core::cost::DeviceTopology;
use graphopt_core::eval::{Decision, Evaluator};
use graphopt_core::graph::{ComputationGraph, OpNode, OpType, TensorEdge};
use graphopt_core::workload::Family;
use graphopt_policy::rl::{RolloutState, Sample, INVALID_REWARD};
use graphopt_policy::{
    collect_rollouts, ppo_update, pretrain_finetune_zeroshot, reward, train, Env, GeneralizationSetup, Policy,
    PolicyConfig, PpoHyper, RolloutBatch, TaskSpec, TrainError, TrainOptions,
};
use graphopt_tensor::tape::softmax_rows;
use graphopt_tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> PolicyConfig {
    PolicyConfig {
        gs_layers: 1,
        gs_dim: 16,
        trf_layers: 1,
        d_model: 16,
        n_head: 2,
        d_head: 4,
        d_inner: 32,
        ..PolicyConfig::small()
    }
}

fn topo(devices: usize) -> DeviceTopology {
    DeviceTopology::homogeneous(devices, 1e12, 1e11, 1e12, 1e9).unwrap()
}

fn single_node() -> ComputationGraph {
    ComputationGraph::new("one", vec![OpNode::new(0, OpType::MatMul, 1e9, 1e3)], vec![]).unwrap()
}

/// Two heavy independent pairs; the best placement splits the pairs.
fn four_node() -> ComputationGraph {
    let nodes = vec![
        OpNode::new(0, OpType::MatMul, 4e9, 1e6),
        OpNode::new(1, OpType::MatMul, 3e9, 1e6),
        OpNode::new(2, OpType::MatMul, 1e9, 1e6),
        OpNode::new(3, OpType::MatMul, 2e9, 1e6),
    ];
    let edges = vec![TensorEdge { src: 0, dst: 1, bytes: 1e6 }, TensorEdge { src: 2, dst: 3, bytes: 1e6 }];
    ComputationGraph::new("four", nodes, edges).unwrap()
}

fn placement_policy(devices: usize, seed: u64) -> Policy {
    Policy::new(tiny_config(), &[TaskSpec { task: Task::Placement, actions: devices }], seed).unwrap()
}

#[test]
fn reward_examples() {
    assert_eq!(reward(2.5, 2.5, true).unwrap().value, -1.0);
    assert_eq!(reward(10.0, 2.5, true).unwrap().value, -2.0);
    assert_eq!(reward(1.0, 2.5, false).unwrap().value, INVALID_REWARD);
    assert!(matches!(reward(1.0, 0.0, true), Err(TrainError::Baseline(_))));
}

proptest! {
    #[test]
    fn reward_strictly_decreases_in_step_time(a in 1e-6f64..1e3, b in 1e-6f64..1e3, base in 1e-3f64..10.0) {
        prop_assume!(a != b);
        let (ra, rb) = (reward(a, base, true).unwrap().value, reward(b, base, true).unwrap().value);
        prop_assert_eq!(a < b, ra > rb);
    }
}

#[test]
fn clipped_term_uses_clip_edge() {
    let mut tape = Tape::new();
    let r = tape.input(Tensor::new(3, 1, vec![1.5, 0.5, 1.1]));
    let s = tape.clipped_surrogate(r, &[2.0, -1.0, 3.0], 0.2);
    // 1.5 A with A > 0 is capped at 1.2 A; 0.5 A with A < 0 at 0.8 A.
    assert_eq!(tape.value(s).data(), &[2.4, -0.8, 1.1 * 3.0]);
}

#[test]
fn single_node_rollout_on_one_device() {
    let g = single_node();
    let t = topo(1);
    let policy = placement_policy(1, 0);
    let env = Env::new(Evaluator::new(&g, &t), policy.config()).unwrap();
    let batch = collect_rollouts(&policy, &[env], 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(batch.len(), 1);
    assert_eq!(batch.samples[0].reward, -1.0);
    assert_eq!(batch.samples[0].actions, vec![vec![0]]);
}

#[test]
fn rollouts_repeat_under_a_fixed_seed() {
    let g = four_node();
    let t = topo(2);
    let policy = placement_policy(2, 1);
    let env = Env::new(Evaluator::new(&g, &t), policy.config()).unwrap();
    let envs = [env];
    let a = collect_rollouts(&policy, &envs, 16, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let b = collect_rollouts(&policy, &envs, 16, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let key = |x: &RolloutBatch| x.samples.iter().map(|s| (s.actions.clone(), s.reward.to_bits())).collect::<Vec<_>>();
    assert_eq!(key(&a), key(&b));
}

#[test]
fn graphs_are_drawn_uniformly() {
    let (g1, g2) = (four_node(), single_node());
    let t = topo(2);
    let policy = placement_policy(2, 2);
    let envs = [
        Env::new(Evaluator::new(&g1, &t), policy.config()).unwrap(),
        Env::new(Evaluator::new(&g2, &t), policy.config()).unwrap(),
    ];
    let k = 800;
    let batch = collect_rollouts(&policy, &envs, k, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let first = batch.samples.iter().filter(|s| s.env == 0).count() as f64;
    let sigma = (k as f64 * 0.25).sqrt();
    assert!((first - 400.0).abs() < 3.0 * sigma, "{first}");
    assert_eq!(batch.states.len(), 2);
}

#[test]
fn joint_samples_carry_three_heads_and_the_combined_reward() {
    let g = four_node();
    let t = topo(2);
    let eval = Evaluator::new(&g, &t);
    let specs = TaskSpec::for_tasks(&eval, &Task::ALL);
    let policy = Policy::new(tiny_config(), &specs, 3).unwrap();
    let env = Env::new(eval.clone(), policy.config()).unwrap();
    let batch = collect_rollouts(&policy, std::slice::from_ref(&env), 6, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    for (i, s) in batch.samples.iter().enumerate() {
        assert_eq!(s.actions.len(), 3);
        let d = batch.decision(&policy, i);
        assert!(d.placement.is_some() && d.schedule.is_some() && d.fusion.is_some());
        let r = eval.evaluate(&d, false).unwrap();
        assert_eq!(s.reward, reward(r.step_time, env.baseline_time, r.valid).unwrap().value);
        assert_eq!(s.advantage, s.reward - s.value);
    }
}

/// One state on a one-node graph with hand-picked actions and rewards.
fn bandit_batch(policy: &Policy, env: &Env<'_>, rewards: &[(usize, f64)]) -> RolloutBatch {
    let g = env.evaluator.graph();
    let features = policy.features(g, None);
    let out = policy.infer(g, &env.ctx, None, Default::default());
    let log_probs: Vec<Tensor> = out.logits.iter().map(graphopt_tensor::tape::log_softmax_rows).collect();
    let samples = rewards
        .iter()
        .map(|&(a, r)| Sample {
            state: 0,
            env: 0,
            actions: vec![vec![a]],
            old_log_probs: vec![vec![log_probs[0].get(0, a)]],
            step_time: 1.0,
            valid: true,
            reward: r,
            value: out.value,
            advantage: r - out.value,
        })
        .collect();
    RolloutBatch { states: vec![RolloutState { env: 0, features, log_probs, value: out.value }], samples }
}

fn prob(policy: &Policy, env: &Env<'_>, a: usize) -> f64 {
    let out = policy.infer(env.evaluator.graph(), &env.ctx, None, Default::default());
    softmax_rows(&out.logits[0]).get(0, a)
}

fn one_pass() -> PpoHyper {
    PpoHyper { rollouts: 2, minibatches: 1, epochs: 1, entropy_coef: 0.0, ..PpoHyper::default() }
}

#[test]
fn bandit_update_raises_the_better_action() {
    let g = single_node();
    let t = topo(2);
    for seed in 0..5 {
        let mut policy = placement_policy(2, seed);
        let env = Env::new(Evaluator::new(&g, &t), policy.config()).unwrap();
        let batch = bandit_batch(&policy, &env, &[(0, -0.5), (1, -1.5)]);
        let before = prob(&policy, &env, 0);
        let envs = [env];
        ppo_update(&mut policy, &envs, &batch, &one_pass(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(prob(&policy, &envs[0], 0) > before, "seed {seed}");
    }
}

#[test]
fn zero_advantages_leave_no_policy_signal() {
    let g = single_node();
    let t = topo(2);
    let mut policy = placement_policy(2, 7);
    let env = Env::new(Evaluator::new(&g, &t), policy.config()).unwrap();
    let batch = bandit_batch(&policy, &env, &[(0, -1.0), (1, -1.0)]);
    let envs = [env];
    let stats = ppo_update(&mut policy, &envs, &batch, &one_pass(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(stats.policy_objective, 0.0);
    assert_eq!(stats.mean_ratio, 1.0);
    assert_eq!(stats.clip_fraction, 0.0);
}

#[test]
fn entropy_at_uniform_logits_is_log_of_action_count() {
    let g = four_node();
    let t = topo(4);
    let mut policy = placement_policy(4, 8);
    let out = policy.params().heads[0].out;
    policy.store_mut().value_mut(out.w).data_mut().fill(0.0);
    policy.store_mut().value_mut(out.b).data_mut().fill(0.0);
    let env = Env::new(Evaluator::new(&g, &t), policy.config()).unwrap();
    let envs = [env];
    let batch = collect_rollouts(&policy, &envs, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let stats = ppo_update(&mut policy, &envs, &batch, &one_pass(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((stats.entropy - 4f64.ln()).abs() < 1e-6, "{}", stats.entropy);
}

#[test]
fn value_head_fits_a_constant_reward() {
    let g = single_node();
    let t = topo(2);
    let mut policy = placement_policy(2, 9);
    let env = Env::new(Evaluator::new(&g, &t), policy.config()).unwrap();
    let envs = [env];
    let hyper = one_pass();
    for _ in 0..100 {
        let batch = bandit_batch(&policy, &envs[0], &[(0, -1.0), (1, -1.0)]);
        ppo_update(&mut policy, &envs, &batch, &hyper, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    }
    let v = policy.infer(envs[0].evaluator.graph(), &envs[0].ctx, None, Default::default()).value;
    assert!((v + 1.0).abs() < 0.05, "value {v}");
}

#[test]
fn non_finite_loss_aborts() {
    let g = four_node();
    let t = topo(2);
    let mut policy = placement_policy(2, 10);
    let env = Env::new(Evaluator::new(&g, &t), policy.config()).unwrap();
    let envs = [env];
    let batch = collect_rollouts(&policy, &envs, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let v = policy.params().value;
    policy.store_mut().value_mut(v.b).data_mut()[0] = f64::NAN;
    let err = ppo_update(&mut policy, &envs, &batch, &one_pass(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, TrainError::NonFinite { .. }));
    assert!(ppo_update(&mut policy, &envs, &RolloutBatch::default(), &one_pass(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn zero_steps_return_initial_parameters() {
    let g = four_node();
    let t = topo(2);
    let mut policy = placement_policy(2, 11);
    let before = policy.store().checkpoint();
    let env = Env::new(Evaluator::new(&g, &t), policy.config()).unwrap();
    let out = train(&mut policy, &[env], &PpoHyper::default(), 0, 0, &TrainOptions::default()).unwrap();
    assert!(out.curve.is_empty());
    assert_eq!(policy.store().checkpoint(), before);
}

#[test]
fn training_finds_the_brute_force_optimum_on_four_nodes() {
    let g = four_node();
    let t = topo(2);
    let eval = Evaluator::new(&g, &t);
    let optimum = brute_force(&eval, Task::Placement, 1_000_000).unwrap().step_time;
    let mut policy = placement_policy(2, 12);
    let env = Env::new(eval, policy.config()).unwrap();
    let hyper = PpoHyper { rollouts: 16, minibatches: 2, epochs: 2, ..PpoHyper::default() };
    let out = train(&mut policy, &[env], &hyper, 200, 3, &TrainOptions::default()).unwrap();
    assert_eq!(out.curve.len(), 200);
    let best = out.best[0].as_ref().unwrap();
    assert_eq!(best.step_time, optimum);
    assert!(out.best_checkpoint.is_some());
    // The curve's best column never increases.
    assert!(out.curve.windows(2).all(|w| w[1].best_step_time[0] <= w[0].best_step_time[0]));
}

#[test]
fn watchdog_stops_a_run_stuck_on_invalid_decisions() {
    let g = four_node();
    // Every placement overflows memory.
    let t = DeviceTopology::homogeneous(2, 1e12, 1e11, 1.0, 1e9).unwrap();
    let mut policy = placement_policy(2, 13);
    let env = Env::new(Evaluator::new(&g, &t), policy.config()).unwrap();
    let hyper = PpoHyper { rollouts: 2, minibatches: 1, epochs: 1, ..PpoHyper::default() };
    let opts = TrainOptions { eval_argmax: false, watchdog_steps: 5, ..TrainOptions::default() };
    let err = train(&mut policy, &[env], &hyper, 20, 0, &opts).unwrap_err();
    assert!(matches!(err, TrainError::Diverged { step: 5, .. }), "{err}");
}

#[test]
fn holdout_must_be_excluded_from_pretraining() {
    let (a, b) = (four_node(), single_node());
    let t = topo(2);
    let policy = placement_policy(2, 14);
    let ea = Env::new(Evaluator::new(&a, &t), policy.config()).unwrap().with_family(Family::GridRnn);
    let eb = Env::new(Evaluator::new(&b, &t), policy.config()).unwrap().with_family(Family::DilatedStack);
    let setup = GeneralizationSetup { pretrain_steps: 1, finetune_steps: 0, scratch_steps: 0, ..Default::default() };
    let hyper = PpoHyper { rollouts: 2, minibatches: 1, epochs: 1, ..PpoHyper::default() };
    let opts = TrainOptions::default();
    let err = pretrain_finetune_zeroshot(&policy, &[ea.clone(), eb.clone()], &ea, &hyper, &setup, 0, &opts).unwrap_err();
    assert!(matches!(err, TrainError::HoldoutInTraining(_)));
    let (rows, _) = pretrain_finetune_zeroshot(&policy, &[eb], &ea, &hyper, &setup, 0, &opts).unwrap();
    assert_eq!(rows.finetuned, rows.zeroshot);
    assert_eq!(rows.finetuned_final, rows.zeroshot);
}

#[test]
fn decisions_from_training_evaluate_to_their_recorded_times() {
    let g = four_node();
    let t = topo(2);
    let eval = Evaluator::new(&g, &t);
    let mut policy = placement_policy(2, 15);
    let env = Env::new(eval.clone(), policy.config()).unwrap();
    let hyper = PpoHyper { rollouts: 8, minibatches: 2, epochs: 1, ..PpoHyper::default() };
    let out = train(&mut policy, &[env], &hyper, 5, 1, &TrainOptions::default()).unwrap();
    let best = out.best[0].as_ref().unwrap();
    assert_eq!(eval.cost(&best.decision), best.step_time);
    assert!(best.step_time <= eval.cost(&Decision::default()) * 10.0);
}
