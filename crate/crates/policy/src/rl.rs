//! PPO over single-step episodes: one decision bundle per sample, reward
//! from the simulator relative to the default pipeline.

use std::collections::BTreeMap;
use std::io::Write;

use graphopt_core::eval::{Decision, Evaluator};
use graphopt_core::workload::Family;
use graphopt_tensor::tape::log_softmax_rows;
use graphopt_tensor::{AdamConfig, Checkpoint, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PolicyConfig;
use crate::net::{ForwardOptions, GraphContext, Policy};
use crate::sample::{iterate_decisions, sample_actions};

pub const INVALID_REWARD: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardSource {
    Measured,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reward {
    pub value: f64,
    pub source: RewardSource,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("baseline time must be positive and finite, got {0}")]
    Baseline(f64),
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("empty rollout batch")]
    EmptyBatch,
    #[error("no training graphs")]
    NoGraphs,
    #[error("non-finite PPO loss {loss} (epoch {epoch}, minibatch {minibatch})")]
    NonFinite { loss: f64, epoch: usize, minibatch: usize },
    #[error("mean reward below {threshold} for {steps} consecutive steps (step {step})")]
    Diverged { threshold: f64, steps: usize, step: usize },
    #[error("holdout graph {0} overlaps the training set")]
    HoldoutInTraining(String),
    #[error("graph {graph}: task {task} has {got} actions, the policy expects {want}")]
    ActionSpace { graph: String, task: String, got: usize, want: usize },
}

/// `-sqrt(step_time / baseline_time)` for valid samples, `INVALID_REWARD`
/// otherwise.
pub fn reward(step_time: f64, baseline_time: f64, valid: bool) -> Result<Reward, TrainError> {
    if !(baseline_time > 0.0 && baseline_time.is_finite()) {
        return Err(TrainError::Baseline(baseline_time));
    }
    Ok(if valid {
        Reward { value: -(step_time / baseline_time).sqrt(), source: RewardSource::Measured }
    } else {
        Reward { value: INVALID_REWARD, source: RewardSource::Invalid }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoHyper {
    pub lr: f64,
    pub rollouts: usize,
    pub minibatches: usize,
    pub epochs: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub normalize_advantages: bool,
    pub max_grad_norm: Option<f64>,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self { lr: 1e-3, entropy_coef: 0.01, max_grad_norm: Some(1.0), ..Self::published() }
    }
}

impl PpoHyper {
    /// Published values; lr 0.5 is unstable with Adam at our scale.
    pub fn published() -> Self {
        Self {
            lr: 0.5,
            rollouts: 800,
            minibatches: 40,
            epochs: 20,
            clip: 0.2,
            entropy_coef: 0.5,
            value_coef: 1.0,
            normalize_advantages: true,
            max_grad_norm: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Hyper(m.to_owned()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.rollouts == 0 || self.minibatches == 0 || self.epochs == 0 {
            return bad("rollouts, minibatches and epochs must be positive");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return bad("loss coefficients must be non-negative");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, max_grad_norm: self.max_grad_norm, ..AdamConfig::default() }
    }
}

/// A training graph with its evaluator, policy context and the step time
/// of the default pipeline (greedy placement, FIFO, no fusion).
#[derive(Debug, Clone)]
pub struct Env<'a> {
    pub name: String,
    pub family: Option<Family>,
    pub evaluator: Evaluator<'a>,
    pub ctx: GraphContext,
    pub baseline_time: f64,
}

impl<'a> Env<'a> {
    pub fn new(evaluator: Evaluator<'a>, config: &PolicyConfig) -> Result<Self, TrainError> {
        let baseline_time = evaluator.baseline().step_time;
        if !(baseline_time > 0.0 && baseline_time.is_finite()) {
            return Err(TrainError::Baseline(baseline_time));
        }
        Ok(Self {
            name: evaluator.graph().name().to_owned(),
            family: None,
            ctx: GraphContext::new(evaluator.graph(), config),
            evaluator,
            baseline_time,
        })
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = Some(family);
        self
    }

    /// Step time of `decision`, infinite when invalid.
    pub fn cost(&self, decision: &Decision) -> f64 {
        self.evaluator.cost(decision)
    }

    fn check(&self, policy: &Policy) -> Result<(), TrainError> {
        for spec in policy.tasks() {
            let got = self.evaluator.action_space(spec.task);
            if got != spec.actions {
                return Err(TrainError::ActionSpace {
                    graph: self.name.clone(),
                    task: spec.task.to_string(),
                    got,
                    want: spec.actions,
                });
            }
        }
        Ok(())
    }
}

/// The policy input shared by every sample drawn from it.
#[derive(Debug, Clone)]
pub struct RolloutState {
    pub env: usize,
    pub features: Tensor,
    /// Log-softmax per task, rows by node id.
    pub log_probs: Vec<Tensor>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub state: usize,
    pub env: usize,
    /// Per task, by node id.
    pub actions: Vec<Vec<usize>>,
    pub old_log_probs: Vec<Vec<f64>>,
    pub step_time: f64,
    pub valid: bool,
    pub reward: f64,
    pub value: f64,
    /// `reward - value`.
    pub advantage: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub states: Vec<RolloutState>,
    pub samples: Vec<Sample>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        self.samples.iter().map(|s| s.reward).sum::<f64>() / self.samples.len().max(1) as f64
    }

    pub fn decision(&self, policy: &Policy, i: usize) -> Decision {
        decision_of(policy, &self.samples[i].actions)
    }
}

fn decision_of(policy: &Policy, actions: &[Vec<usize>]) -> Decision {
    let mut d = Decision::default();
    for (spec, a) in policy.tasks().iter().zip(actions) {
        d.set(spec.task, a.clone());
    }
    d
}

/// `k` samples, each on a uniformly drawn graph. The decision iterations
/// before the last run once per drawn graph; the final iteration's
/// distribution is sampled `k` times.
pub fn collect_rollouts<R: Rng>(
    policy: &Policy,
    envs: &[Env<'_>],
    k: usize,
    rng: &mut R,
) -> Result<RolloutBatch, TrainError> {
    if envs.is_empty() {
        return Err(TrainError::NoGraphs);
    }
    let draws: Vec<usize> = (0..k).map(|_| rng.gen_range(0..envs.len())).collect();
    let mut state_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut batch = RolloutBatch::default();
    for &e in &draws {
        if state_of.contains_key(&e) {
            continue;
        }
        let env = &envs[e];
        env.check(policy)?;
        let graph = env.evaluator.graph();
        let iterations = policy.config().iterations;
        let prev = if iterations > 1 {
            iterate_decisions(policy, graph, &env.ctx, iterations - 1, 1.0, rng).last().map(|b| b.actions())
        } else {
            None
        };
        let features = policy.features(graph, prev.as_deref());
        let mut tape = Tape::new();
        let out = policy.forward(&mut tape, &env.ctx, &features, ForwardOptions::default());
        let log_probs = out
            .logits
            .iter()
            .map(|&l| log_softmax_rows(&env.ctx.rows_by_id(tape.value(l))))
            .collect();
        let value = tape.value(out.value).item();
        state_of.insert(e, batch.states.len());
        batch.states.push(RolloutState { env: e, features, log_probs, value });
    }

    for &e in &draws {
        let state = state_of[&e];
        let st = &batch.states[state];
        let env = &envs[e];
        let mut actions = Vec::with_capacity(st.log_probs.len());
        let mut old_log_probs = Vec::with_capacity(st.log_probs.len());
        for lp in &st.log_probs {
            // Log-softmax rows are valid logits for the same distribution.
            let (a, l) = sample_actions(lp, 1.0, rng);
            actions.push(a);
            old_log_probs.push(l);
        }
        let result = env.evaluator.evaluate(&decision_of(policy, &actions), false);
        let (step_time, valid) = match result {
            Ok(r) => (r.step_time, r.valid),
            Err(_) => (f64::INFINITY, false),
        };
        let r = reward(step_time, env.baseline_time, valid)?.value;
        batch.samples.push(Sample {
            state,
            env: e,
            actions,
            old_log_probs,
            step_time,
            valid,
            reward: r,
            value: st.value,
            advantage: r - st.value,
        });
    }
    Ok(batch)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub mean_ratio: f64,
    /// Fraction of per-node ratios outside `[1 - clip, 1 + clip]`.
    pub clip_fraction: f64,
    /// Mean per-node entropy in nats.
    pub entropy: f64,
    pub value_loss: f64,
    pub policy_objective: f64,
    pub updates: usize,
}

/// Per-node entropy averaged over nodes, then over tasks.
fn mean_entropy(tape: &mut Tape, logits: &[Var]) -> Var {
    let per_task: Vec<Var> = logits
        .iter()
        .map(|&l| {
            let ls = tape.log_softmax(l);
            let p = tape.exp(ls);
            let pl = tape.mul(p, ls);
            let m = tape.mean_rows(pl);
            let s = tape.sum_all(m);
            tape.scale(s, -1.0)
        })
        .collect();
    let total = if per_task.len() == 1 { per_task[0] } else {
        let cat = tape.concat_cols(&per_task);
        tape.sum_all(cat)
    };
    tape.scale(total, 1.0 / logits.len() as f64)
}

/// `epochs` passes over `minibatches` shuffled splits of `batch`, one Adam
/// step per split, maximising the clipped surrogate plus the entropy bonus
/// minus the value loss.
pub fn ppo_update<R: Rng>(
    policy: &mut Policy,
    envs: &[Env<'_>],
    batch: &RolloutBatch,
    hyper: &PpoHyper,
    rng: &mut R,
) -> Result<PpoStats, TrainError> {
    hyper.validate()?;
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let advantages = advantages(batch, hyper.normalize_advantages);
    let adam = hyper.adam();
    let n_tasks = policy.tasks().len() as f64;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let splits = hyper.minibatches.min(batch.len());
    let mut stats = PpoStats::default();
    let (mut ratio_sum, mut ratio_count, mut clipped) = (0.0, 0usize, 0usize);

    for epoch in 0..hyper.epochs {
        order.shuffle(rng);
        for (mb, chunk) in split(&order, splits).into_iter().enumerate() {
            let m = chunk.len() as f64;
            let mut by_state: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &i in chunk {
                by_state.entry(batch.samples[i].state).or_default().push(i);
            }
            let mut loss_total = 0.0;
            for (&s, members) in &by_state {
                let state = &batch.states[s];
                let ctx = &envs[state.env].ctx;
                let mut tape = Tape::new();
                let out = policy.forward(&mut tape, ctx, &state.features, ForwardOptions::default());
                let log_sm: Vec<Var> = out.logits.iter().map(|&l| tape.log_softmax(l)).collect();
                let mut terms: Vec<Var> = Vec::new();
                let mut surrogate_value = 0.0;
                for &i in members {
                    let sample = &batch.samples[i];
                    let n = ctx.len();
                    let adv = vec![advantages[i]; n];
                    let mut per_task = Vec::with_capacity(log_sm.len());
                    for (t, &ls) in log_sm.iter().enumerate() {
                        let rows_actions = ctx.to_rows(&sample.actions[t]);
                        let old = Tensor::new(n, 1, ctx.to_rows(&sample.old_log_probs[t]));
                        let lp = tape.pick(ls, &rows_actions);
                        let old = tape.constant(old);
                        let diff = tape.sub(lp, old);
                        let ratio = tape.exp(diff);
                        for &r in tape.value(ratio).data() {
                            ratio_sum += r;
                            ratio_count += 1;
                            if (r - 1.0).abs() > hyper.clip {
                                clipped += 1;
                            }
                        }
                        let sur = tape.clipped_surrogate(ratio, &adv, hyper.clip);
                        per_task.push(tape.mean_all(sur));
                    }
                    let obj = if per_task.len() == 1 { per_task[0] } else {
                        let cat = tape.concat_cols(&per_task);
                        tape.sum_all(cat)
                    };
                    let obj = tape.scale(obj, -1.0 / n_tasks);
                    surrogate_value -= tape.value(obj).item();
                    terms.push(obj);

                    let target = tape.constant(Tensor::scalar(sample.reward));
                    let err = tape.sub(out.value, target);
                    let sq = tape.mul(err, err);
                    stats.value_loss += tape.value(sq).item();
                    terms.push(tape.scale(sq, hyper.value_coef));
                }
                let ent = mean_entropy(&mut tape, &out.logits);
                let h = tape.value(ent).item();
                stats.entropy += h * members.len() as f64;
                stats.policy_objective += surrogate_value;
                terms.push(tape.scale(ent, -hyper.entropy_coef * members.len() as f64));
                let cat = tape.concat_cols(&terms);
                let sum = tape.sum_all(cat);
                let loss = tape.scale(sum, 1.0 / m);
                let lv = tape.value(loss).item();
                if !lv.is_finite() {
                    policy.store_mut().zero_grads();
                    return Err(TrainError::NonFinite { loss: lv, epoch, minibatch: mb });
                }
                loss_total += lv;
                let grads = tape.backward(loss);
                tape.accumulate_param_grads(&grads, policy.store_mut());
            }
            debug_assert!(loss_total.is_finite());
            policy.store_mut().adam_step(&adam);
            stats.updates += 1;
        }
    }
    let seen = (hyper.epochs * batch.len()) as f64;
    stats.entropy /= seen;
    stats.value_loss /= seen;
    stats.policy_objective /= seen;
    stats.mean_ratio = ratio_sum / ratio_count.max(1) as f64;
    stats.clip_fraction = clipped as f64 / ratio_count.max(1) as f64;
    Ok(stats)
}

/// Raw advantages `reward - value`, optionally standardised over the batch.
pub fn advantages(batch: &RolloutBatch, normalize: bool) -> Vec<f64> {
    let raw: Vec<f64> = batch.samples.iter().map(|s| s.advantage).collect();
    if !normalize || raw.len() < 2 {
        return raw;
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|a| (a - mean) / std).collect()
}

/// `parts` near-equal contiguous chunks.
fn split(items: &[usize], parts: usize) -> Vec<&[usize]> {
    let (base, extra) = (items.len() / parts, items.len() % parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(&items[start..start + len]);
        start += len;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestFound {
    pub step_time: f64,
    pub decision: Decision,
    /// Training step that found it; 0 is the initial argmax decision.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_reward: f64,
    /// Best step time so far per graph, infinite until a valid sample.
    pub best_step_time: Vec<f64>,
}

/// Writes `step,graph,mean_reward,best_step_time`.
pub fn write_curve_csv<W: Write>(
    mut w: W,
    curve: &[CurvePoint],
    names: &[String],
) -> std::io::Result<()> {
    writeln!(w, "step,graph,mean_reward,best_step_time")?;
    for p in curve {
        for (name, best) in names.iter().zip(&p.best_step_time) {
            writeln!(w, "{},{},{},{}", p.step, name, p.mean_reward, best)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Evaluate the argmax decision of every graph after each update.
    pub eval_argmax: bool,
    /// Consecutive steps with mean reward below `watchdog_threshold` that
    /// abort training.
    pub watchdog_steps: usize,
    pub watchdog_threshold: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { eval_argmax: true, watchdog_steps: 50, watchdog_threshold: -9.0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<CurvePoint>,
    /// Per graph; includes the argmax decision before the first update.
    pub best: Vec<Option<BestFound>>,
    /// Parameters with the best rollout mean reward.
    pub best_checkpoint: Option<Checkpoint>,
    pub best_mean_reward: f64,
    pub last_stats: Option<PpoStats>,
}

/// Deterministic decision of the current parameters.
pub fn argmax_decision(policy: &Policy, env: &Env<'_>) -> Decision {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let graph = env.evaluator.graph();
    let traj = iterate_decisions(policy, graph, &env.ctx, policy.config().iterations, 0.0, &mut rng);
    traj.last().expect("at least one iteration").decision()
}

fn offer(best: &mut Option<BestFound>, step_time: f64, decision: impl FnOnce() -> Decision, step: usize) {
    if step_time.is_finite() && best.as_ref().map_or(true, |b| step_time < b.step_time) {
        *best = Some(BestFound { step_time, decision: decision(), step });
    }
}

/// Alternates rollouts and PPO updates for `steps` steps.
pub fn train(
    policy: &mut Policy,
    envs: &[Env<'_>],
    hyper: &PpoHyper,
    steps: usize,
    seed: u64,
    options: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    hyper.validate()?;
    if envs.is_empty() {
        return Err(TrainError::NoGraphs);
    }
    for env in envs {
        env.check(policy)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Vec<Option<BestFound>> = vec![None; envs.len()];
    let eval_argmax = |policy: &Policy, best: &mut Vec<Option<BestFound>>, step: usize| {
        for (e, env) in envs.iter().enumerate() {
            let d = argmax_decision(policy, env);
            let t = env.cost(&d);
            offer(&mut best[e], t, || d, step);
        }
    };
    eval_argmax(policy, &mut best, 0);

    let mut outcome = TrainOutcome {
        curve: Vec::with_capacity(steps),
        best: Vec::new(),
        best_checkpoint: None,
        best_mean_reward: f64::NEG_INFINITY,
        last_stats: None,
    };
    let mut low_streak = 0;
    for step in 1..=steps {
        let batch = collect_rollouts(policy, envs, hyper.rollouts, &mut rng)?;
        for (i, s) in batch.samples.iter().enumerate() {
            if s.valid {
                offer(&mut best[s.env], s.step_time, || batch.decision(policy, i), step);
            }
        }
        let mean = batch.mean_reward();
        if mean > outcome.best_mean_reward {
            outcome.best_mean_reward = mean;
            outcome.best_checkpoint = Some(policy.store().checkpoint());
        }
        low_streak = if mean < options.watchdog_threshold { low_streak + 1 } else { 0 };
        if options.watchdog_steps > 0 && low_streak >= options.watchdog_steps {
            return Err(TrainError::Diverged {
                threshold: options.watchdog_threshold,
                steps: options.watchdog_steps,
                step,
            });
        }
        outcome.last_stats = Some(ppo_update(policy, envs, &batch, hyper, &mut rng)?);
        if options.eval_argmax {
            eval_argmax(policy, &mut best, step);
        }
        outcome.curve.push(CurvePoint {
            step,
            mean_reward: mean,
            best_step_time: best.iter().map(|b| b.as_ref().map_or(f64::INFINITY, |b| b.step_time)).collect(),
        });
    }
    outcome.best = best;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralizationSetup {
    pub pretrain_steps: usize,
    /// Graphs per pretraining batch.
    pub batch_graphs: usize,
    /// Steps spent on one batch before moving to the next.
    pub steps_per_batch: usize,
    pub finetune_steps: usize,
    pub scratch_steps: usize,
}

impl Default for GeneralizationSetup {
    fn default() -> Self {
        Self { pretrain_steps: 100, batch_graphs: 5, steps_per_batch: 1000, finetune_steps: 50, scratch_steps: 50 }
    }
}

/// Step times on the holdout graph, infinite when invalid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizationRows {
    /// Argmax decision of the pretrained policy.
    pub zeroshot: f64,
    /// Best decision over fine-tuning, which starts from the zero-shot one.
    pub finetuned: f64,
    /// Argmax decision after the last fine-tuning step.
    pub finetuned_final: f64,
    /// Best decision of a fresh policy trained for `scratch_steps`.
    pub scratch: f64,
}

/// Pretrains on `train_envs`, then evaluates zero-shot, fine-tuned and
/// from-scratch results on `holdout`. Returns the rows and the pretrained
/// policy.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_finetune_zeroshot(
    init: &Policy,
    train_envs: &[Env<'_>],
    holdout: &Env<'_>,
    hyper: &PpoHyper,
    setup: &GeneralizationSetup,
    seed: u64,
    options: &TrainOptions,
) -> Result<(GeneralizationRows, Policy), TrainError> {
    if train_envs.is_empty() {
        return Err(TrainError::NoGraphs);
    }
    let overlaps = train_envs.iter().any(|e| {
        e.name == holdout.name
            || e.evaluator.graph() == holdout.evaluator.graph()
            || (e.family.is_some() && e.family == holdout.family)
    });
    if overlaps {
        return Err(TrainError::HoldoutInTraining(holdout.name.clone()));
    }

    let mut pre = init.clone();
    let batches: Vec<&[Env<'_>]> = train_envs.chunks(setup.batch_graphs.max(1)).collect();
    let per = setup.steps_per_batch.max(1);
    let mut done = 0;
    let mut round = 0u64;
    while done < setup.pretrain_steps {
        let chunk = batches[(round as usize) % batches.len()];
        let steps = per.min(setup.pretrain_steps - done);
        let quiet = TrainOptions { eval_argmax: false, ..options.clone() };
        train(&mut pre, chunk, hyper, steps, seed.wrapping_add(round), &quiet)?;
        done += steps;
        round += 1;
    }

    let zeroshot = holdout.cost(&argmax_decision(&pre, holdout));
    let mut ft = pre.clone();
    let tuned = train(&mut ft, std::slice::from_ref(holdout), hyper, setup.finetune_steps, seed ^ 0xF1, options)?;
    let finetuned = tuned.best[0].as_ref().map_or(f64::INFINITY, |b| b.step_time);
    let finetuned_final = holdout.cost(&argmax_decision(&ft, holdout));

    let mut fresh = Policy::new(init.config().clone(), init.tasks(), seed ^ 0x5C)
        .expect("configuration already validated");
    let scratch_run =
        train(&mut fresh, std::slice::from_ref(holdout), hyper, setup.scratch_steps, seed ^ 0x5C, options)?;
    let scratch = scratch_run.best[0].as_ref().map_or(f64::INFINITY, |b| b.step_time);
    Ok((GeneralizationRows { zeroshot, finetuned, finetuned_final, scratch }, pre))
}
