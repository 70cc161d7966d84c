//! Behavioral cloning: regress expert actions straight from demos. No
//! buffers, no discriminator — this is the supervised baseline the
//! adversarial paths are measured against, and the calibration tool that
//! sets per-task demo budgets.

use crate::autodiff::{AdamConfig, AutodiffError, Tape};
use crate::gail::Trajectory;
use crate::models::{batch_carried_onehot, batch_grid_onehot, ActorCritic, CARRY_DIM, CELLS, OBS_CHANNELS};
use crate::rng;
use crate::Scalar;
use rand::seq::SliceRandom;

#[derive(Debug, Clone)]
pub struct BcConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// evaluate every this many updates
    pub eval_cadence: usize,
    pub truncation: usize,
    pub adam: AdamConfig,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            batch_size: 32,
            epochs: 200,
            eval_cadence: 100,
            truncation: 20,
            adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
        }
    }
}

impl BcConfig {
    pub fn validate(&self) {
        assert!(self.batch_size > 0 && self.epochs > 0);
        assert!(self.eval_cadence > 0 && self.truncation > 0);
    }
}

/// One supervised step on a batch of demos: thread the recurrent state
/// through each demo (gradients cut every `truncation` steps), take the
/// mean cross-entropy of the policy's logits against the expert actions
/// over all real steps, and apply one Adam update. Returns the loss.
pub fn bc_update(
    policy: &mut ActorCritic,
    batch: &[&Trajectory],
    truncation: usize,
    adam: &AdamConfig,
) -> Result<Scalar, AutodiffError> {
    let b = batch.len();
    assert!(b > 0);
    let t_max = batch.iter().map(|d| d.len()).max().unwrap();
    let real_steps: usize = batch.iter().map(|d| d.len()).sum();

    let mut tape = Tape::new();
    let bound = policy.bind(&mut tape);
    let seqs: Vec<&[u16]> = batch.iter().map(|d| d.instr.tokens.as_slice()).collect();
    let enc = bound.trunk.encode_instructions(&mut tape, &seqs);
    let film = bound.trunk.film_params(&mut tape, enc);

    let mut h = tape.leaf(&[b, policy.profile.lstm], vec![0.0; b * policy.profile.lstm]);
    let mut c = tape.leaf(&[b, policy.profile.lstm], vec![0.0; b * policy.profile.lstm]);
    let mut parts = Vec::with_capacity(t_max);
    for t in 0..t_max {
        if t > 0 && t % truncation == 0 {
            h = tape.stop_grad(h);
            c = tape.stop_grad(c);
        }
        // shorter demos repeat their last step as padding; the mask
        // removes those cells from the loss
        let views: Vec<&crate::env::Observation> =
            batch.iter().map(|d| &d.steps[t.min(d.len() - 1)].0).collect();
        let acts: Vec<usize> =
            batch.iter().map(|d| d.steps[t.min(d.len() - 1)].1.id() as usize).collect();
        let mask: Vec<Scalar> =
            batch.iter().map(|d| if t < d.len() { 1.0 } else { 0.0 }).collect();

        let grid = tape.leaf(&[b, CELLS, OBS_CHANNELS], batch_grid_onehot(&views));
        let car = tape.leaf(&[b, CARRY_DIM], batch_carried_onehot(&views));
        let feats = bound.trunk.features(&mut tape, grid, car, &film);
        let step = bound.step(&mut tape, feats, h, c);
        h = step.h;
        c = step.c;

        let ls = tape.log_softmax(step.logits);
        let taken = tape.take_per_row(ls, &acts);
        let m = tape.leaf(&[b, 1], mask);
        parts.push(tape.mul(taken, m));
    }
    let all = tape.concat_rows(&parts);
    let total = tape.sum(all);
    let loss = tape.mul_const(total, -1.0 / real_steps as Scalar);

    let out = tape.value(loss);
    tape.backward(loss)?;
    policy.store.zero_grads();
    policy.store.absorb(&tape);
    policy.store.adam_step(adam);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BcOutcome {
    /// (update index, eval success rate) at each evaluation
    pub curve: Vec<(usize, Scalar)>,
    pub updates: usize,
    /// true when ten consecutive evaluations were >= 99%
    pub solved: bool,
    pub final_loss: Scalar,
}

/// Epoch loop over the demo set with periodic evaluation. Stops early
/// after ten consecutive evals at >= 99% success, on the deadline, or
/// when the epoch budget runs out. `eval_fn` is injected so this module
/// stays independent of the evaluation harness.
pub fn bc_train(
    policy: &mut ActorCritic,
    demos: &[Trajectory],
    cfg: &BcConfig,
    seed: u64,
    deadline: Option<std::time::Instant>,
    on_update: &mut dyn FnMut(usize, Scalar),
    eval_fn: &mut dyn FnMut(&ActorCritic) -> Scalar,
) -> Result<BcOutcome, AutodiffError> {
    cfg.validate();
    assert!(!demos.is_empty());
    let mut out =
        BcOutcome { curve: Vec::new(), updates: 0, solved: false, final_loss: Scalar::NAN };
    let mut streak = 0;
    'outer: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..demos.len()).collect();
        let mut r = rng::stream(seed, "bc-shuffle", epoch as u64);
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Trajectory> = chunk.iter().map(|&i| &demos[i]).collect();
            out.final_loss = bc_update(policy, &batch, cfg.truncation, &cfg.adam)?;
            out.updates += 1;
            on_update(out.updates, out.final_loss);
            if out.updates % cfg.eval_cadence == 0 {
                let rate = eval_fn(policy);
                out.curve.push((out.updates, rate));
                streak = if rate >= 0.99 { streak + 1 } else { 0 };
                if streak >= 10 {
                    out.solved = true;
                    break 'outer;
                }
            }
            if deadline.is_some_and(|d| std::time::Instant::now() >= d) {
                break 'outer;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bot;
    use crate::env;
    use crate::models::{LaneMemory, Profile};

    fn demo_batch(n: usize) -> Vec<Trajectory> {
        let task = env::preset("gotoredball-mini").unwrap();
        bot::generate_demos(&task, "gotoredball-mini", n, 11).unwrap().demos
    }

    #[test]
    fn untrained_loss_is_uniform_cross_entropy() {
        let demos = demo_batch(4);
        let refs: Vec<&Trajectory> = demos.iter().collect();
        let mut policy = ActorCritic::new(Profile::tiny(), 30);
        // freeze the step by using lr 0 so only the loss value matters
        let adam = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        let loss = bc_update(&mut policy, &refs, 20, &adam).unwrap();
        assert!(
            (loss - (6.0 as Scalar).ln()).abs() < 1e-5,
            "uniform over 6 actions, got {loss}"
        );
    }

    #[test]
    fn batch_order_does_not_change_the_loss() {
        let demos = demo_batch(6);
        let fwd: Vec<&Trajectory> = demos.iter().collect();
        let rev: Vec<&Trajectory> = demos.iter().rev().collect();
        let adam = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        let mut p1 = ActorCritic::new(Profile::tiny(), 31);
        let mut p2 = ActorCritic::new(Profile::tiny(), 31);
        let l1 = bc_update(&mut p1, &fwd, 20, &adam).unwrap();
        let l2 = bc_update(&mut p2, &rev, 20, &adam).unwrap();
        assert!((l1 - l2).abs() < 1e-5, "{l1} vs {l2}");
    }

    #[test]
    fn overfits_one_demo_and_replays_it_greedily() {
        let demos = demo_batch(1);
        let demo = &demos[0];
        assert!(demo.len() >= 2, "want a demo with some structure");
        let copies: Vec<&Trajectory> = std::iter::repeat(demo).take(10).collect();
        let mut policy = ActorCritic::new(Profile::tiny(), 32);
        let adam = AdamConfig { lr: 3e-3, ..AdamConfig::default() };
        let mut loss = Scalar::MAX;
        for _ in 0..1200 {
            loss = bc_update(&mut policy, &copies, 20, &adam).unwrap();
            if loss < 0.01 {
                break;
            }
        }
        assert!(loss < 0.01, "failed to overfit: {loss}");

        // teacher-forced greedy pass reproduces every expert action
        let enc = policy.encode_instructions_data(&[demo.instr.tokens.as_slice()]);
        let mut mem = LaneMemory::zeros(1, policy.profile.lstm);
        for (obs, want) in &demo.steps {
            let (logits, _) = policy.act_data(&[obs], &enc, &mut mem);
            let argmax = (0..6).max_by(|&a, &b| logits[a].total_cmp(&logits[b])).unwrap();
            assert_eq!(argmax as u8, want.id(), "diverged from the demo");
        }
    }

    #[test]
    fn train_loop_stops_after_ten_good_evals() {
        let demos = demo_batch(3);
        let mut policy = ActorCritic::new(Profile::tiny(), 33);
        let cfg = BcConfig { batch_size: 2, epochs: 50, eval_cadence: 1, ..BcConfig::default() };
        let mut evals = 0;
        let out = bc_train(&mut policy, &demos, &cfg, 7, None, &mut |_, _| {}, &mut |_p| {
            evals += 1;
            1.0 // pretend the task is solved from the start
        })
        .unwrap();
        assert!(out.solved);
        assert_eq!(evals, 10, "should stop right at the tenth consecutive pass");
        assert_eq!(out.curve.len(), 10);
        assert!(out.curve.iter().all(|&(_, r)| r >= 0.99));
    }
}
