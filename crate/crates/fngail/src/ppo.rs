//! Rollout collection across parallel env lanes and the clipped policy
//! update. Episodes end on the Done action (or timeout); the learned
//! reward lands on the final step only and GAE spreads it back through
//! the episode. Recurrent state is carried as plain numbers between
//! windows and replayed on-tape during updates with truncated BPTT.

use crate::autodiff::{AdamConfig, AutodiffError, Tape};
use crate::env::{self, Action, EndCause, EnvError, Observation, TaskSpec, WorldState};
use crate::gail::{GailError, Source, Trajectory};
use crate::lang::Instruction;
use crate::models::{
    batch_carried_onehot, batch_grid_onehot, ActorCritic, FilmParams, LaneMemory, CARRY_DIM,
    CELLS, OBS_CHANNELS,
};
use crate::rng::{self, Rng};
use crate::Scalar;
use rand::Rng as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("reward computation failed: {0}")]
    Reward(#[from] GailError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone)]
pub struct PpoConfig {
    pub clip: Scalar,
    pub value_coef: Scalar,
    pub entropy_coef: Scalar,
    pub gamma: Scalar,
    pub gae_lambda: Scalar,
    pub epochs: usize,
    pub lanes: usize,
    pub rollout_len: usize,
    pub truncation: usize,
    pub adam: AdamConfig,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            gamma: 0.99,
            gae_lambda: 0.99,
            epochs: 4,
            lanes: 64,
            rollout_len: 40,
            truncation: 20,
            adam: AdamConfig::default(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) {
        assert!(self.clip > 0.0 && self.clip < 1.0);
        assert!(self.gamma > 0.0 && self.gamma <= 1.0);
        assert!(self.gae_lambda >= 0.0 && self.gae_lambda <= 1.0);
        assert!(self.epochs > 0 && self.lanes > 0 && self.rollout_len > 0);
        assert!(self.truncation > 0);
    }
}

/// One collection window, time-major: index `t * lanes + l`. Every cell
/// is a real transition — ended lanes reset immediately and keep
/// stepping. `dones[i]` marks the episode's final step; memory is zeroed
/// before the next one.
pub struct RolloutBatch {
    pub lanes: usize,
    pub steps: usize,
    pub obs: Vec<Observation>,
    pub actions: Vec<u8>,
    pub logps: Vec<Scalar>,
    pub values: Vec<Scalar>,
    pub rewards: Vec<Scalar>,
    pub dones: Vec<bool>,
    /// per-cell index into `instrs`
    pub instr_idx: Vec<usize>,
    pub instrs: Vec<Instruction>,
    /// recurrent state entering the window's first step
    pub start_h: Vec<Scalar>,
    pub start_c: Vec<Scalar>,
    /// bootstrap values for the state after the last step (ignored where
    /// that step ended an episode)
    pub last_values: Vec<Scalar>,
}

impl RolloutBatch {
    pub fn frames(&self) -> usize {
        self.lanes * self.steps
    }
}

/// Persistent rollout state: live env lanes, the episodes they are in
/// the middle of, and the policy memory those episodes have accumulated.
/// Survives across windows so long episodes span several batches.
pub struct LaneSet {
    task: TaskSpec,
    pub done_terminates: bool,
    seed: u64,
    episode_counter: u64,
    states: Vec<WorldState>,
    instrs: Vec<Instruction>,
    partial: Vec<Vec<(Observation, Action)>>,
    ever_success: Vec<bool>,
    mem: LaneMemory,
    enc: Vec<Scalar>,
    enc_width: usize,
    pub episodes_finished: usize,
}

impl LaneSet {
    pub fn new(
        task: &TaskSpec,
        lanes: usize,
        seed: u64,
        done_terminates: bool,
        policy: &ActorCritic,
    ) -> Result<LaneSet, PpoError> {
        assert!(lanes > 0);
        let mut set = LaneSet {
            task: task.clone(),
            done_terminates,
            seed,
            episode_counter: 0,
            states: Vec::with_capacity(lanes),
            instrs: Vec::with_capacity(lanes),
            partial: vec![Vec::new(); lanes],
            ever_success: vec![false; lanes],
            mem: LaneMemory::zeros(lanes, policy.profile.lstm),
            enc: vec![0.0; lanes * policy.profile.gru],
            enc_width: policy.profile.gru,
            episodes_finished: 0,
        };
        for _ in 0..lanes {
            let ep_seed = rng::derive(seed, "rollout-episode", set.episode_counter);
            set.episode_counter += 1;
            let (state, instr) = env::reset(task, ep_seed)?;
            set.states.push(state);
            set.instrs.push(instr);
        }
        set.refresh_encodings(policy);
        Ok(set)
    }

    pub fn lanes(&self) -> usize {
        self.states.len()
    }

    /// Steps buffered in unfinished episodes (frame-accounting aid).
    pub fn carried_steps(&self) -> usize {
        self.partial.iter().map(|p| p.len()).sum()
    }

    /// Re-encode every lane's instruction with the current parameters.
    /// Called at window start so conditioning never goes stale after a
    /// policy update.
    fn refresh_encodings(&mut self, policy: &ActorCritic) {
        let seqs: Vec<&[u16]> = self.instrs.iter().map(|i| i.tokens.as_slice()).collect();
        self.enc = policy.encode_instructions_data(&seqs);
    }

    fn reset_lane(&mut self, lane: usize, policy: &ActorCritic) -> Result<(), PpoError> {
        let ep_seed = rng::derive(self.seed, "rollout-episode", self.episode_counter);
        self.episode_counter += 1;
        let (state, instr) = env::reset(&self.task, ep_seed)?;
        self.states[lane] = state;
        let seqs = [instr.tokens.as_slice()];
        let enc = policy.encode_instructions_data(&seqs);
        let w = self.enc_width;
        self.enc[lane * w..(lane + 1) * w].copy_from_slice(&enc);
        self.instrs[lane] = instr;
        self.partial[lane].clear();
        self.ever_success[lane] = false;
        self.mem.reset_lane(lane);
        Ok(())
    }
}

fn sample_categorical(logps: &[Scalar], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0f64;
    for (i, &lp) in logps.iter().enumerate() {
        acc += (lp as f64).exp();
        if u < acc {
            return i;
        }
    }
    logps.len() - 1
}

fn log_softmax_row(logits: &[Scalar]) -> Vec<Scalar> {
    let m = logits.iter().cloned().fold(Scalar::NEG_INFINITY, Scalar::max);
    let z: Scalar = logits.iter().map(|&v| (v - m).exp()).sum();
    let lz = z.ln() + m;
    logits.iter().map(|&v| v - lz).collect()
}

/// Step every lane `cfg.rollout_len` times. Episodes that finish are
/// scored (`reward_fn` on the full trajectory when they end with Done,
/// or on timeout when Done-termination is off), returned for the caller
/// to buffer, and their lanes reset immediately. A reward failure aborts
/// the whole batch.
pub fn collect_rollouts(
    lanes: &mut LaneSet,
    policy: &ActorCritic,
    cfg: &PpoConfig,
    reward_fn: &mut dyn FnMut(&Trajectory) -> Result<Scalar, GailError>,
    rng: &mut Rng,
) -> Result<(RolloutBatch, Vec<Trajectory>), PpoError> {
    let n = lanes.lanes();
    let t_max = cfg.rollout_len;
    lanes.refresh_encodings(policy);

    let mut batch = RolloutBatch {
        lanes: n,
        steps: t_max,
        obs: Vec::with_capacity(n * t_max),
        actions: Vec::with_capacity(n * t_max),
        logps: Vec::with_capacity(n * t_max),
        values: Vec::with_capacity(n * t_max),
        rewards: vec![0.0; n * t_max],
        dones: vec![false; n * t_max],
        instr_idx: Vec::with_capacity(n * t_max),
        instrs: Vec::new(),
        start_h: lanes.mem.h.clone(),
        start_c: lanes.mem.c.clone(),
        last_values: vec![0.0; n],
    };
    let mut completed = Vec::new();

    // per-lane index of the instruction in batch.instrs for the episode
    // currently running; refreshed on reset
    let mut cur_idx: Vec<usize> = Vec::with_capacity(n);
    for l in 0..n {
        cur_idx.push(batch.instrs.len());
        batch.instrs.push(lanes.instrs[l].clone());
    }

    for t in 0..t_max {
        let views: Vec<Observation> = lanes.states.iter().map(env::observe).collect();
        let refs: Vec<&Observation> = views.iter().collect();
        let (logits, values) = policy.act_data(&refs, &lanes.enc, &mut lanes.mem);

        for l in 0..n {
            let row = log_softmax_row(&logits[l * Action::COUNT..(l + 1) * Action::COUNT]);
            let a_id = sample_categorical(&row, rng);
            let action = Action::from_id(a_id as u8).expect("sampled inside the action set");

            batch.obs.push(views[l].clone());
            batch.actions.push(a_id as u8);
            batch.logps.push(row[a_id]);
            batch.values.push(values[l]);
            batch.instr_idx.push(cur_idx[l]);

            let res = env::step_mode(&mut lanes.states[l], action, lanes.done_terminates)?;
            lanes.partial[l].push((views[l].clone(), action));
            if env::oracle_success(&lanes.states[l], &lanes.instrs[l]) {
                lanes.ever_success[l] = true;
            }

            if res.terminated || res.timeout {
                let end = if res.terminated { EndCause::Done } else { EndCause::Timeout };
                let traj = Trajectory {
                    instr: lanes.instrs[l].clone(),
                    steps: std::mem::take(&mut lanes.partial[l]),
                    end,
                    oracle_success: lanes.ever_success[l],
                    source: Source::Agent,
                };
                // reward only where the episode "finishes": at Done when
                // Done terminates, else at the time limit
                let cell = t * n + l;
                batch.rewards[cell] = match end {
                    EndCause::Done => reward_fn(&traj)?,
                    EndCause::Timeout if !lanes.done_terminates => reward_fn(&traj)?,
                    EndCause::Timeout => 0.0,
                };
                batch.dones[cell] = true;
                completed.push(traj);
                lanes.episodes_finished += 1;
                lanes.reset_lane(l, policy)?;
                cur_idx[l] = batch.instrs.len();
                batch.instrs.push(lanes.instrs[l].clone());
            }
        }
    }

    // bootstrap values for whatever state each lane is in now, without
    // disturbing the carried memory
    let views: Vec<Observation> = lanes.states.iter().map(env::observe).collect();
    let refs: Vec<&Observation> = views.iter().collect();
    let mut probe = lanes.mem.clone();
    let (_, last_values) = policy.act_data(&refs, &lanes.enc, &mut probe);
    batch.last_values = last_values;

    Ok((batch, completed))
}

/// Standard GAE over the window, time-major like the batch. Terminal
/// steps cut bootstrapping; the final step bootstraps from
/// `last_values`. Returns (advantages, returns = advantages + values).
pub fn compute_advantages(
    batch: &RolloutBatch,
    gamma: Scalar,
    gae_lambda: Scalar,
) -> (Vec<Scalar>, Vec<Scalar>) {
    let n = batch.lanes;
    let t_max = batch.steps;
    let mut adv = vec![0.0; n * t_max];
    let mut carry = vec![0.0; n];
    for t in (0..t_max).rev() {
        for l in 0..n {
            let cell = t * n + l;
            let cont = if batch.dones[cell] { 0.0 } else { 1.0 };
            let next_v = if t + 1 == t_max {
                batch.last_values[l]
            } else {
                batch.values[(t + 1) * n + l]
            };
            let delta = batch.rewards[cell] + gamma * next_v * cont - batch.values[cell];
            carry[l] = delta + gamma * gae_lambda * cont * carry[l];
            adv[cell] = carry[l];
        }
    }
    let ret: Vec<Scalar> =
        adv.iter().zip(&batch.values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

#[derive(Debug, Clone)]
pub struct PpoLosses {
    pub policy: Scalar,
    pub value: Scalar,
    pub entropy: Scalar,
    pub total: Scalar,
    /// mean(old_logp − new_logp) on the first epoch; ~0 right after
    /// collection since the parameters haven't moved yet
    pub approx_kl: Scalar,
}

/// Replay the window on-tape and take `cfg.epochs` clipped-surrogate
/// steps. The recurrence is rebuilt exactly as collected — same start
/// memory, resets where episodes ended — with gradients cut every
/// `cfg.truncation` steps. Advantages are normalized once per batch.
pub fn ppo_update(
    policy: &mut ActorCritic,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
) -> Result<PpoLosses, PpoError> {
    cfg.validate();
    let n = batch.lanes;
    let t_max = batch.steps;
    let cells = n * t_max;
    assert_eq!(batch.obs.len(), cells);

    let (adv_raw, ret) = compute_advantages(batch, cfg.gamma, cfg.gae_lambda);
    let mean = adv_raw.iter().sum::<Scalar>() / cells as Scalar;
    let var = adv_raw.iter().map(|a| (a - mean) * (a - mean)).sum::<Scalar>() / cells as Scalar;
    let std = var.sqrt().max(1e-8);
    let adv: Vec<Scalar> = adv_raw.iter().map(|a| (a - mean) / std).collect();

    // unique instructions; cells reference them through remapped indices
    let mut uniq: Vec<&Instruction> = Vec::new();
    let mut remap = vec![0usize; batch.instrs.len()];
    for (i, instr) in batch.instrs.iter().enumerate() {
        match uniq.iter().position(|u| u.tokens == instr.tokens) {
            Some(j) => remap[i] = j,
            None => {
                remap[i] = uniq.len();
                uniq.push(instr);
            }
        }
    }
    let uniq_seqs: Vec<&[u16]> = uniq.iter().map(|i| i.tokens.as_slice()).collect();

    // per-step onehot encodings are policy-independent; build once
    let mut grids = Vec::with_capacity(t_max);
    let mut carrs = Vec::with_capacity(t_max);
    let mut acts = Vec::with_capacity(t_max);
    let mut enc_rows = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let views: Vec<&Observation> = (0..n).map(|l| &batch.obs[t * n + l]).collect();
        grids.push(batch_grid_onehot(&views));
        carrs.push(batch_carried_onehot(&views));
        acts.push((0..n).map(|l| batch.actions[t * n + l] as usize).collect::<Vec<_>>());
        enc_rows.push(
            (0..n).map(|l| remap[batch.instr_idx[t * n + l]]).collect::<Vec<_>>(),
        );
    }

    let mut out = PpoLosses { policy: 0.0, value: 0.0, entropy: 0.0, total: 0.0, approx_kl: 0.0 };
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let bound = policy.bind(&mut tape);
        let enc_all = bound.trunk.encode_instructions(&mut tape, &uniq_seqs);
        let film_all = bound.trunk.film_params(&mut tape, enc_all);

        let mut h = tape.leaf(&[n, policy.profile.lstm], batch.start_h.clone());
        let mut c = tape.leaf(&[n, policy.profile.lstm], batch.start_c.clone());
        let mut surr_parts = Vec::with_capacity(t_max);
        let mut vloss_parts = Vec::with_capacity(t_max);
        let mut ent_parts = Vec::with_capacity(t_max);
        let mut new_logp_parts = Vec::with_capacity(t_max);

        for t in 0..t_max {
            if t > 0 && t % cfg.truncation == 0 {
                h = tape.stop_grad(h);
                c = tape.stop_grad(c);
            }
            let grid = tape.leaf(&[n, CELLS, OBS_CHANNELS], grids[t].clone());
            let car = tape.leaf(&[n, CARRY_DIM], carrs[t].clone());
            let film = FilmParams {
                scale1: tape.gather_rows(film_all.scale1, &enc_rows[t]),
                shift1: tape.gather_rows(film_all.shift1, &enc_rows[t]),
                scale2: tape.gather_rows(film_all.scale2, &enc_rows[t]),
                shift2: tape.gather_rows(film_all.shift2, &enc_rows[t]),
            };
            let feats = bound.trunk.features(&mut tape, grid, car, &film);
            let step = bound.step(&mut tape, feats, h, c);

            // zero memory rows where an episode ended at this step
            let keep: Vec<Scalar> =
                (0..n).map(|l| if batch.dones[t * n + l] { 0.0 } else { 1.0 }).collect();
            let keep = tape.leaf(&[n, 1], keep);
            h = tape.row_scale(step.h, keep);
            c = tape.row_scale(step.c, keep);

            let ls = tape.log_softmax(step.logits);
            let taken = tape.take_per_row(ls, &acts[t]);
            let old_lp =
                tape.leaf(&[n, 1], (0..n).map(|l| batch.logps[t * n + l]).collect());
            let adv_t =
                tape.leaf(&[n, 1], (0..n).map(|l| adv[t * n + l]).collect());
            let diff = tape.sub(taken, old_lp);
            let ratio = tape.exp(diff);
            let r_adv = tape.mul(ratio, adv_t);
            let r_clip = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
            let rc_adv = tape.mul(r_clip, adv_t);
            surr_parts.push(tape.min(r_adv, rc_adv));
            new_logp_parts.push(taken);

            let ret_t =
                tape.leaf(&[n, 1], (0..n).map(|l| ret[t * n + l]).collect());
            let old_v =
                tape.leaf(&[n, 1], (0..n).map(|l| batch.values[t * n + l]).collect());
            let v_err = tape.sub(step.value, ret_t);
            let v_sq = tape.mul(v_err, v_err);
            let dv = tape.sub(step.value, old_v);
            let dv_c = tape.clamp(dv, -cfg.clip, cfg.clip);
            let v_clipped = tape.add(old_v, dv_c);
            let vc_err = tape.sub(v_clipped, ret_t);
            let vc_sq = tape.mul(vc_err, vc_err);
            vloss_parts.push(tape.max(v_sq, vc_sq));

            let p = tape.exp(ls);
            let plogp = tape.mul(p, ls);
            let neg_ent = tape.row_sum(plogp);
            ent_parts.push(tape.mul_const(neg_ent, -1.0));
        }

        let surr_all = tape.concat_rows(&surr_parts);
        let vloss_all = tape.concat_rows(&vloss_parts);
        let ent_all = tape.concat_rows(&ent_parts);
        let surr_mean = tape.mean(surr_all);
        let policy_loss = tape.mul_const(surr_mean, -1.0);
        let value_loss = tape.mean(vloss_all);
        let entropy = tape.mean(ent_all);
        let v_term = tape.mul_const(value_loss, cfg.value_coef);
        let e_term = tape.mul_const(entropy, -cfg.entropy_coef);
        let partial = tape.add(policy_loss, v_term);
        let total = tape.add(partial, e_term);

        if epoch == 0 {
            let new_all = tape.concat_rows(&new_logp_parts);
            let new_data = tape.data(new_all);
            let mut kl = 0.0;
            for t in 0..t_max {
                for l in 0..n {
                    kl += batch.logps[t * n + l] - new_data[t * n + l];
                }
            }
            out.approx_kl = kl / cells as Scalar;
        }
        out.policy = tape.value(policy_loss);
        out.value = tape.value(value_loss);
        out.entropy = tape.value(entropy);
        out.total = tape.value(total);

        tape.backward(total)?;
        policy.store.zero_grads();
        policy.store.absorb(&tape);
        policy.store.adam_step(&cfg.adam);
    }
    Ok(out)
}
