//! Rollout collection and clipped-surrogate updates.
//!
//! Every source of randomness is seeded per environment or per update, and
//! all floating-point reductions run through the fixed-chunk helpers, so a
//! training run reproduces bit-for-bit regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment, sample_plan, PlanBounds};
use crate::exec;
use crate::nn::{GradSet, Optimizer, Policy, Tape};
use crate::sim::{Action, Environment, SimError};
use crate::state::{encode_junction, raw_reward, RewardNormalizer, TrafficState};

use super::{advantages, returns_to_go, EpisodeRecord, PpoConfig, PpoError, Transition, UpdateReport};

struct EnvRunner {
    env_id: usize,
    env: Environment,
    state: TrafficState,
    action_rng: ChaCha8Rng,
    episode_seed_base: u64,
    episodes_started: u64,
    episode_return_raw: f64,
    episode_steps: usize,
}

impl EnvRunner {
    fn new(env_id: usize, mut env: Environment, episode_seed_base: u64, action_seed: u64) -> EnvRunner {
        env.reset(episode_seed_base);
        EnvRunner {
            env_id,
            env,
            state: TrafficState::zeroed(),
            action_rng: ChaCha8Rng::seed_from_u64(action_seed),
            episode_seed_base,
            episodes_started: 1,
            episode_return_raw: 0.0,
            episode_steps: 0,
        }
    }

    /// Steps this environment `quota` times under the fixed policy. The
    /// stored successor value of each transition is filled by the next
    /// action-selection forward, or by one closing evaluation at episode
    /// ends and at the end of the quota.
    fn rollout(
        &mut self,
        policy: &Policy,
        quota: usize,
        start_step: usize,
        num_envs: usize,
    ) -> Result<(Vec<Transition>, Vec<EpisodeRecord>), SimError> {
        let mut transitions: Vec<Transition> = Vec::with_capacity(quota);
        let mut episodes = Vec::new();
        let mut pending: Option<usize> = None;
        for i in 0..quota {
            let eval = policy.evaluate(&self.state);
            if let Some(p) = pending.take() {
                transitions[p].next_value = eval.value;
            }
            let action_idx = usize::from(self.action_rng.gen::<f64>() >= eval.probs()[0]);
            let action = if action_idx == 0 { Action::Keep } else { Action::Change };
            let state_before = self.state;
            let outcome = self.env.step(action)?;
            let reward_raw = raw_reward(&outcome.queue_len);
            self.state.push_frame(encode_junction(&outcome, self.env.config()));
            self.episode_return_raw += reward_raw;
            self.episode_steps += 1;
            transitions.push(Transition {
                env_id: self.env_id,
                state: state_before,
                action: action_idx,
                log_prob: eval.log_probs[action_idx],
                reward_raw,
                reward: 0.0,
                value: eval.value,
                next_value: f64::NAN,
                done: outcome.done,
            });
            pending = Some(i);
            if outcome.done {
                let closing = policy.evaluate(&self.state);
                transitions[pending.take().unwrap()].next_value = closing.value;
                episodes.push(EpisodeRecord {
                    env_id: self.env_id,
                    seed: self.current_episode_seed(),
                    end_step: start_step + i * num_envs + self.env_id,
                    len: self.episode_steps,
                    raw_return: self.episode_return_raw,
                    avg_wait_s: self.env.avg_waiting_time(),
                });
                let next_seed = self.episode_seed_base.wrapping_add(self.episodes_started);
                self.episodes_started += 1;
                self.env.reset(next_seed);
                self.state = TrafficState::zeroed();
                self.episode_return_raw = 0.0;
                self.episode_steps = 0;
            }
        }
        if let Some(p) = pending.take() {
            let closing = policy.evaluate(&self.state);
            transitions[p].next_value = closing.value;
        }
        Ok((transitions, episodes))
    }

    fn current_episode_seed(&self) -> u64 {
        self.episode_seed_base.wrapping_add(self.episodes_started - 1)
    }
}

pub struct Trainer {
    pub cfg: PpoConfig,
    pub policy: Policy,
    optimizer: Optimizer,
    normalizer: RewardNormalizer,
    runners: Vec<EnvRunner>,
    active_masks: Vec<[bool; 8]>,
    shuffle_rng: ChaCha8Rng,
    aug_seed_base: u64,
    aug_plans_drawn: u64,
    steps_done: usize,
    pub history: Vec<EpisodeRecord>,
    pub updates: Vec<UpdateReport>,
}

struct ChunkStats {
    grads: GradSet,
    loss_sum: f64,
    policy_sum: f64,
    value_sum: f64,
    entropy_sum: f64,
    clip_hits: usize,
    max_ratio_dev: f64,
}

impl Trainer {
    pub fn new(policy: Policy, envs: Vec<Environment>, cfg: PpoConfig, seed: u64) -> Result<Trainer, PpoError> {
        if envs.is_empty() {
            return Err(PpoError::NoEnvironments);
        }
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let active_masks: Vec<[bool; 8]> = envs.iter().map(|e| e.config().active_mask()).collect();
        let runners: Vec<EnvRunner> = envs
            .into_iter()
            .enumerate()
            .map(|(i, env)| {
                let episode_seed_base = master.gen::<u64>();
                let action_seed = master.gen::<u64>();
                EnvRunner::new(i, env, episode_seed_base, action_seed)
            })
            .collect();
        let shuffle_rng = ChaCha8Rng::seed_from_u64(master.gen::<u64>());
        let aug_seed_base = master.gen::<u64>();
        let optimizer = if cfg.sgd {
            Optimizer::sgd(cfg.lr)
        } else {
            Optimizer::adam(&policy.store, cfg.lr)
        };
        let normalizer = RewardNormalizer::new(cfg.warmup_rewards, RewardNormalizer::DEFAULT_EPSILON);
        Ok(Trainer {
            cfg,
            policy,
            optimizer,
            normalizer,
            runners,
            active_masks,
            shuffle_rng,
            aug_seed_base,
            aug_plans_drawn: 0,
            steps_done: 0,
            history: Vec::new(),
            updates: Vec::new(),
        })
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn normalizer(&self) -> &RewardNormalizer {
        &self.normalizer
    }

    /// Gathers one buffer of transitions, interleaved round-robin across
    /// environments, and feeds raw rewards through the normalizer in
    /// buffer order.
    pub fn collect(&mut self) -> Result<Vec<Transition>, PpoError> {
        let n = self.runners.len();
        let buffer_size = self.cfg.buffer_size;
        let start_step = self.steps_done;
        let policy = &self.policy;
        let results = exec::map_collect_mut(&mut self.runners, |runner| {
            let quota = (buffer_size + n - 1 - runner.env_id) / n;
            runner.rollout(policy, quota, start_step, n)
        });
        let mut chunks = Vec::with_capacity(n);
        let mut episodes = Vec::new();
        for result in results {
            let (transitions, mut eps) = result?;
            chunks.push(transitions);
            episodes.append(&mut eps);
        }
        episodes.sort_by_key(|e| (e.end_step, e.env_id));
        self.history.extend(episodes);

        let rounds = chunks.first().map_or(0, Vec::len);
        let mut lanes: Vec<std::vec::IntoIter<Transition>> = chunks.into_iter().map(Vec::into_iter).collect();
        let mut buffer = Vec::with_capacity(buffer_size);
        for _ in 0..rounds {
            for lane in &mut lanes {
                if let Some(t) = lane.next() {
                    buffer.push(t);
                }
            }
        }
        debug_assert_eq!(buffer.len(), buffer_size);
        for t in &mut buffer {
            t.reward = self.normalizer.observe(t.reward_raw);
        }
        self.steps_done += buffer.len();
        Ok(buffer)
    }

    /// Runs the clipped-surrogate update over one collected buffer.
    pub fn update(&mut self, mut buffer: Vec<Transition>) -> Result<UpdateReport, PpoError> {
        let update_index = self.updates.len();
        let behaviour_log_probs = if self.cfg.augment {
            let seed_base = self.aug_seed_base;
            let drawn = self.aug_plans_drawn;
            let masks = &self.active_masks;
            let enabled = self.cfg.aug_transforms;
            let policy = &self.policy;
            let rewritten = exec::map_range(buffer.len(), |i| {
                let t = &buffer[i];
                let mut bounds = PlanBounds::for_active(masks[t.env_id]);
                bounds.enabled = enabled;
                let plan = sample_plan(seed_base.wrapping_add(drawn + i as u64), &bounds);
                augment(&t.state, &plan).map(|state| {
                    let log_prob = policy.evaluate(&state).log_probs[t.action];
                    (state, log_prob)
                })
            });
            self.aug_plans_drawn += buffer.len() as u64;
            let mut log_probs = Vec::with_capacity(buffer.len());
            for (t, r) in buffer.iter_mut().zip(rewritten) {
                let (state, log_prob) = r?;
                t.state = state;
                log_probs.push(log_prob);
            }
            log_probs
        } else {
            buffer.iter().map(|t| t.log_prob).collect()
        };

        let rets = returns_to_go(&buffer, self.cfg.gamma);
        let advs = advantages(&buffer, self.cfg.gamma);

        let mut order: Vec<usize> = (0..buffer.len()).collect();
        let mut policy_sum = 0.0;
        let mut value_sum = 0.0;
        let mut entropy_sum = 0.0;
        let mut clip_hits = 0usize;
        let mut samples_seen = 0usize;
        let mut minibatches = 0usize;
        let mut first_batch_max_ratio_dev = 0.0;
        let mut first_batch_clip_fraction = 0.0;
        for epoch in 0..self.cfg.epochs {
            use rand::seq::SliceRandom;
            order.shuffle(&mut self.shuffle_rng);
            for (mb_idx, mb) in order.chunks(self.cfg.minibatch).enumerate() {
                let chunk_bounds: Vec<(usize, usize)> = (0..mb.len())
                    .step_by(exec::CHUNK)
                    .map(|lo| (lo, mb.len().min(lo + exec::CHUNK)))
                    .collect();
                let policy = &self.policy;
                let cfg = &self.cfg;
                let buf = &buffer;
                let stats = exec::map_range(chunk_bounds.len(), |c| {
                    let (lo, hi) = chunk_bounds[c];
                    chunk_pass(policy, cfg, buf, &mb[lo..hi], &behaviour_log_probs, &advs, &rets)
                });

                let mut grads = GradSet::empty(&self.policy.store);
                let mut loss_sum = 0.0;
                let mut mb_clip_hits = 0usize;
                let mut mb_max_dev = 0.0f64;
                let mut mb_policy = 0.0;
                let mut mb_value = 0.0;
                let mut mb_entropy = 0.0;
                for s in stats {
                    grads.add_assign(&s.grads);
                    loss_sum += s.loss_sum;
                    mb_policy += s.policy_sum;
                    mb_value += s.value_sum;
                    mb_entropy += s.entropy_sum;
                    mb_clip_hits += s.clip_hits;
                    mb_max_dev = mb_max_dev.max(s.max_ratio_dev);
                }
                let scale = 1.0 / mb.len() as f64;
                grads.scale_assign(scale);
                if let Some(bound) = self.cfg.max_grad_norm {
                    let norm = grads.norm();
                    if norm > bound {
                        grads.scale_assign(bound / norm);
                    }
                }
                if !(loss_sum.is_finite() && grads.norm().is_finite()) {
                    return Err(PpoError::NonFinite { update: update_index });
                }
                if epoch == 0 && mb_idx == 0 {
                    first_batch_max_ratio_dev = mb_max_dev;
                    first_batch_clip_fraction = mb_clip_hits as f64 / mb.len() as f64;
                }
                self.optimizer.apply(&mut self.policy.store, &grads);
                policy_sum += mb_policy * scale;
                value_sum += mb_value * scale;
                entropy_sum += mb_entropy * scale;
                clip_hits += mb_clip_hits;
                samples_seen += mb.len();
                minibatches += 1;
            }
        }
        let report = UpdateReport {
            index: update_index,
            steps_done: self.steps_done,
            policy_loss: policy_sum / minibatches as f64,
            value_loss: value_sum / minibatches as f64,
            entropy: entropy_sum / minibatches as f64,
            clip_fraction: clip_hits as f64 / samples_seen as f64,
            first_batch_max_ratio_dev,
            first_batch_clip_fraction,
        };
        self.updates.push(report.clone());
        Ok(report)
    }

    /// Alternates collection and updates until at least `total_steps`
    /// transitions have been consumed.
    pub fn train(&mut self, total_steps: usize) -> Result<(), PpoError> {
        while self.steps_done < total_steps {
            let buffer = self.collect()?;
            self.update(buffer)?;
        }
        Ok(())
    }
}

/// Builds the loss graph for a handful of samples and returns their summed
/// losses and gradients plus ratio statistics.
fn chunk_pass(
    policy: &Policy,
    cfg: &PpoConfig,
    buffer: &[Transition],
    idxs: &[usize],
    behaviour_log_probs: &[f64],
    advs: &[f64],
    rets: &[f64],
) -> ChunkStats {
    use crate::nn::Tensor;

    let mut tape = Tape::new(&policy.store);
    let mut lp_nodes = Vec::with_capacity(idxs.len());
    let mut value_nodes = Vec::with_capacity(idxs.len());
    let mut entropy_nodes = Vec::with_capacity(idxs.len());
    for &i in idxs {
        let t = &buffer[i];
        let nodes = policy.forward(&mut tape, &t.state);
        lp_nodes.push(tape.select_col(nodes.log_probs, t.action));
        value_nodes.push(nodes.value);
        let probs = tape.exp(nodes.log_probs);
        let plogp = tape.mul(probs, nodes.log_probs);
        let nent = tape.sum(plogp);
        entropy_nodes.push(tape.neg(nent));
    }
    let lp = tape.concat_rows(&lp_nodes);
    let values = tape.concat_rows(&value_nodes);
    let entropies = tape.concat_rows(&entropy_nodes);

    let n = idxs.len();
    let old = tape.constant(Tensor::from_vec(n, 1, idxs.iter().map(|&i| behaviour_log_probs[i]).collect()));
    let adv = tape.constant(Tensor::from_vec(n, 1, idxs.iter().map(|&i| advs[i]).collect()));
    let ret = tape.constant(Tensor::from_vec(n, 1, idxs.iter().map(|&i| rets[i]).collect()));

    let diff = tape.sub(lp, old);
    let ratio = tape.exp(diff);
    let surr1 = tape.mul(ratio, adv);
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let surr2 = tape.mul(clipped, adv);
    let objective = tape.min_elem(surr1, surr2);
    let policy_sum_node = tape.sum(objective);

    let verr = tape.sub(values, ret);
    let vsq = tape.mul(verr, verr);
    let value_sum_node = tape.sum(vsq);

    let entropy_sum_node = tape.sum(entropies);

    let neg_policy = tape.neg(policy_sum_node);
    let weighted_value = tape.scale(value_sum_node, cfg.value_coef);
    let mut loss = tape.add(neg_policy, weighted_value);
    if cfg.entropy_coef != 0.0 {
        let bonus = tape.scale(entropy_sum_node, -cfg.entropy_coef);
        loss = tape.add(loss, bonus);
    }

    let grads = tape.backward(loss);
    let ratio_values = &tape.value(ratio).data;
    let clip_hits = ratio_values.iter().filter(|r| (**r - 1.0).abs() > cfg.clip).count();
    let max_ratio_dev = ratio_values.iter().fold(0.0f64, |m, r| m.max((r - 1.0).abs()));
    ChunkStats {
        grads,
        loss_sum: tape.value(loss).at(0, 0),
        policy_sum: tape.value(policy_sum_node).at(0, 0),
        value_sum: tape.value(value_sum_node).at(0, 0),
        entropy_sum: tape.value(entropy_sum_node).at(0, 0),
        clip_hits,
        max_ratio_dev,
    }
}
