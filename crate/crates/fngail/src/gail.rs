//! Adversarial imitation core: trajectory buffers, the discriminator head
//! zoo (what counts as a positive/negative for each head), terminal reward
//! mixing, and the false-negative diagnostic that motivates the whole
//! exercise. Heads share one trunk; an update step batches every head's
//! forwards together and dedupes repeated (trajectory, instruction) pairs.

use crate::autodiff::{AdamConfig, NodeId, Tape};
use crate::env::{Action, EndCause, Observation};
use crate::lang::{Instruction, InstructionSet, LangError};
use crate::models::{Discriminator, SeqRef};
use crate::rng::Rng;
use crate::Scalar;
use rand::Rng as _;
use std::collections::HashMap;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GailError {
    #[error("trajectory source {traj:?} does not match buffer role {buffer:?}")]
    RoleMismatch { buffer: Source, traj: Source },
    #[error("expert buffer is at capacity ({0}); the demo set is fixed")]
    ExpertBufferFull(usize),
    #[error("instruction pool too small for fake conditioning")]
    Lang(#[from] LangError),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("head {0:?} is not enabled on this discriminator")]
    HeadNotEnabled(HeadKind),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
}

/// The seven discriminator losses. An experiment enables a subset; each
/// enabled head owns an output MLP on the shared trunk and contributes an
/// equal-weight share of the terminal reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// expert vs agent, both with their real instructions
    Conventional,
    /// like Conventional but negatives come only from oracle-failed agent
    /// episodes (diagnostic upper bound; uses hidden env success)
    OracleFiltered,
    /// negatives are agent trajectories re-labeled with fake instructions
    AgentFc,
    /// negatives are *expert* trajectories re-labeled with fake
    /// instructions (no agent data at all)
    ExpertFc,
    /// both sides conditioned on the blank instruction
    BlankConditioning,
    /// complete demos vs strict prefixes of demos (expert data only)
    DoneDetector,
    /// full trajectories and prefixes on both sides
    SubTrajectory,
}

impl HeadKind {
    pub const ALL: [HeadKind; 7] = [
        HeadKind::Conventional,
        HeadKind::OracleFiltered,
        HeadKind::AgentFc,
        HeadKind::ExpertFc,
        HeadKind::BlankConditioning,
        HeadKind::DoneDetector,
        HeadKind::SubTrajectory,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            HeadKind::Conventional => "conventional",
            HeadKind::OracleFiltered => "oracle_filtered",
            HeadKind::AgentFc => "agent_fc",
            HeadKind::ExpertFc => "expert_fc",
            HeadKind::BlankConditioning => "blank_conditioning",
            HeadKind::DoneDetector => "done_detector",
            HeadKind::SubTrajectory => "sub_trajectory",
        }
    }

    pub fn from_tag(tag: &str) -> Option<HeadKind> {
        HeadKind::ALL.iter().copied().find(|k| k.tag() == tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Agent,
    Expert,
}

/// One full episode: the instruction it was collected under, the
/// (observation, action) sequence, how it ended, and the hidden oracle
/// verdict. The oracle flag is off-limits to the reward path — only the
/// OracleFiltered sampler, diagnostics, and evaluation may read it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub instr: Instruction,
    pub steps: Vec<(Observation, Action)>,
    pub end: EndCause,
    pub oracle_success: bool,
    pub source: Source,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A generated demonstration corpus (all expert-sourced trajectories).
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub task_name: String,
    pub demos: Vec<Trajectory>,
}

/// Bounded FIFO of trajectories. The agent buffer evicts oldest-first at
/// capacity; the expert buffer holds a fixed demo set and refuses to grow.
pub struct TrajectoryBuffer {
    role: Source,
    capacity: usize,
    items: VecDeque<Trajectory>,
}

impl TrajectoryBuffer {
    pub fn new_agent(capacity: usize) -> TrajectoryBuffer {
        assert!(capacity > 0);
        TrajectoryBuffer { role: Source::Agent, capacity, items: VecDeque::new() }
    }

    pub fn new_expert(capacity: usize) -> TrajectoryBuffer {
        assert!(capacity > 0);
        TrajectoryBuffer { role: Source::Expert, capacity, items: VecDeque::new() }
    }

    /// Expert buffer pre-filled from a demo set (capacity = demo count).
    pub fn from_demos(demos: Vec<Trajectory>) -> TrajectoryBuffer {
        let mut buf = TrajectoryBuffer::new_expert(demos.len().max(1));
        for d in demos {
            buf.push(d).expect("demo fill cannot overflow its own capacity");
        }
        buf
    }

    pub fn role(&self) -> Source {
        self.role
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Trajectory {
        &self.items[i]
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &Trajectory> + ExactSizeIterator {
        self.items.iter()
    }

    pub fn push(&mut self, traj: Trajectory) -> Result<(), GailError> {
        assert!(!traj.is_empty(), "trajectories must have at least one step");
        if traj.source != self.role {
            return Err(GailError::RoleMismatch { buffer: self.role, traj: traj.source });
        }
        if self.items.len() == self.capacity {
            match self.role {
                Source::Agent => {
                    self.items.pop_front();
                }
                Source::Expert => return Err(GailError::ExpertBufferFull(self.capacity)),
            }
        }
        debug_assert!(
            self.role != Source::Expert || (traj.end == EndCause::Done && traj.oracle_success),
            "expert demos must end in Done and satisfy the oracle"
        );
        self.items.push_back(traj);
        Ok(())
    }

    /// Indices of oracle-failed trajectories (the only ones the
    /// OracleFiltered head may use as negatives). The buffer itself is
    /// untouched.
    pub fn oracle_filter(&self) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.oracle_success)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Every strict prefix of every buffered trajectory, as (index, length)
/// pairs — a length-T trajectory contributes lengths 1..T-1. Batch
/// sampling draws prefixes lazily; this materialization backs the tests.
pub fn make_prefixes(buf: &TrajectoryBuffer) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, t) in buf.iter().enumerate() {
        for len in 1..t.len() {
            out.push((i, len));
        }
    }
    out
}

/// One element of a discriminator batch: which trajectory, what
/// instruction it is conditioned on, and how many steps are scored
/// (len < T means a prefix read).
#[derive(Debug, Clone)]
pub struct SampledItem {
    pub source: Source,
    pub index: usize,
    pub cond: Instruction,
    pub len: usize,
}

fn pick<'a>(buf: &'a TrajectoryBuffer, rng: &mut Rng) -> (usize, &'a Trajectory) {
    let i = rng.gen_range(0..buf.len());
    (i, buf.get(i))
}

fn sample_full(buf: &TrajectoryBuffer, n: usize, rng: &mut Rng) -> Vec<SampledItem> {
    (0..n)
        .map(|_| {
            let (i, t) = pick(buf, rng);
            SampledItem { source: buf.role(), index: i, cond: t.instr.clone(), len: t.len() }
        })
        .collect()
}

fn sample_fake_cond(
    buf: &TrajectoryBuffer,
    pool: &InstructionSet,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<SampledItem>, GailError> {
    (0..n)
        .map(|_| {
            let (i, t) = pick(buf, rng);
            let fake = pool.sample_fake(&t.instr, rng)?;
            Ok(SampledItem { source: buf.role(), index: i, cond: fake, len: t.len() })
        })
        .collect()
}

fn sample_blank(buf: &TrajectoryBuffer, n: usize, rng: &mut Rng) -> Vec<SampledItem> {
    (0..n)
        .map(|_| {
            let (i, t) = pick(buf, rng);
            SampledItem { source: buf.role(), index: i, cond: Instruction::blank(), len: t.len() }
        })
        .collect()
}

/// Trajectory plus a random cut: lengths 1..=T (T = the full trajectory).
fn sample_with_prefixes(buf: &TrajectoryBuffer, n: usize, rng: &mut Rng) -> Vec<SampledItem> {
    (0..n)
        .map(|_| {
            let (i, t) = pick(buf, rng);
            let len = rng.gen_range(1..=t.len());
            SampledItem { source: buf.role(), index: i, cond: t.instr.clone(), len }
        })
        .collect()
}

/// Draw one head's balanced batch (size/2 positives, size/2 negatives).
/// Returns Ok(None) when a required source is empty this round — the
/// caller skips the head rather than failing mid-training.
pub fn assemble_batch(
    kind: HeadKind,
    b_agent: &TrajectoryBuffer,
    b_expert: &TrajectoryBuffer,
    pool: &InstructionSet,
    rng: &mut Rng,
    size: usize,
) -> Result<Option<(Vec<SampledItem>, Vec<SampledItem>)>, GailError> {
    assert!(size >= 2 && size % 2 == 0, "batch size must be even");
    let half = size / 2;
    if b_expert.is_empty() {
        return Ok(None);
    }
    if matches!(kind, HeadKind::AgentFc | HeadKind::ExpertFc) && pool.len() < 2 {
        return Err(GailError::Lang(LangError::PoolTooSmall));
    }
    let batch = match kind {
        HeadKind::Conventional => {
            if b_agent.is_empty() {
                return Ok(None);
            }
            (sample_full(b_expert, half, rng), sample_full(b_agent, half, rng))
        }
        HeadKind::OracleFiltered => {
            let failed = b_agent.oracle_filter();
            if failed.is_empty() {
                return Ok(None);
            }
            let neg = (0..half)
                .map(|_| {
                    let i = failed[rng.gen_range(0..failed.len())];
                    let t = b_agent.get(i);
                    debug_assert!(
                        !t.oracle_success,
                        "oracle-filtered negatives must be failures"
                    );
                    SampledItem {
                        source: Source::Agent,
                        index: i,
                        cond: t.instr.clone(),
                        len: t.len(),
                    }
                })
                .collect();
            (sample_full(b_expert, half, rng), neg)
        }
        HeadKind::AgentFc => {
            if b_agent.is_empty() {
                return Ok(None);
            }
            (sample_full(b_expert, half, rng), sample_fake_cond(b_agent, pool, half, rng)?)
        }
        HeadKind::ExpertFc => {
            // deliberately no agent data: positives and negatives are both
            // expert trajectories, distinguished only by the conditioning
            (sample_full(b_expert, half, rng), sample_fake_cond(b_expert, pool, half, rng)?)
        }
        HeadKind::BlankConditioning => {
            if b_agent.is_empty() {
                return Ok(None);
            }
            (sample_blank(b_expert, half, rng), sample_blank(b_agent, half, rng))
        }
        HeadKind::DoneDetector => {
            let eligible: Vec<usize> = (0..b_expert.len())
                .filter(|&i| b_expert.get(i).len() >= 2)
                .collect();
            if eligible.is_empty() {
                return Ok(None);
            }
            let neg = (0..half)
                .map(|_| {
                    let i = eligible[rng.gen_range(0..eligible.len())];
                    let t = b_expert.get(i);
                    let len = rng.gen_range(1..t.len());
                    SampledItem {
                        source: Source::Expert,
                        index: i,
                        cond: t.instr.clone(),
                        len,
                    }
                })
                .collect();
            (sample_full(b_expert, half, rng), neg)
        }
        HeadKind::SubTrajectory => {
            if b_agent.is_empty() {
                return Ok(None);
            }
            (
                sample_with_prefixes(b_expert, half, rng),
                sample_with_prefixes(b_agent, half, rng),
            )
        }
    };
    Ok(Some(batch))
}

/// Binary cross-entropy over already-computed head scores, clamped away
/// from 0/1 before the logs. Untrained scores (all 0.5) give 2 ln 2.
pub fn head_loss(pos: &[Scalar], neg: &[Scalar], eps: Scalar) -> Result<Scalar, GailError> {
    assert!(!pos.is_empty() && !neg.is_empty());
    // check inputs up front: max/min would silently clamp a NaN score
    if pos.iter().chain(neg).any(|d| !d.is_finite()) {
        return Err(GailError::NonFinite("discriminator score"));
    }
    let clamp = |d: Scalar| d.max(eps).min(1.0 - eps);
    let lp: Scalar = pos.iter().map(|&d| -clamp(d).ln()).sum::<Scalar>() / pos.len() as Scalar;
    let ln: Scalar =
        neg.iter().map(|&d| -(1.0 - clamp(d)).ln()).sum::<Scalar>() / neg.len() as Scalar;
    let loss = lp + ln;
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(GailError::NonFinite("head loss"))
    }
}

/// Terminal reward from per-head scores: mean over heads of
/// -log(1 - min(D, 1-eps)), computed as -log(max(1-D, eps)) so the cap
/// lands exactly on -log(eps) instead of losing bits to 1-(1-eps).
/// Zero when every head says 0.
pub fn terminal_reward(head_scores: &[Scalar], eps: Scalar) -> Scalar {
    assert!(!head_scores.is_empty());
    let sum: Scalar = head_scores.iter().map(|&d| -(1.0 - d).max(eps).ln()).sum();
    sum / head_scores.len() as Scalar
}

/// Which heads feed the reward and the bounding epsilon.
#[derive(Debug, Clone)]
pub struct RewardConfig {
    pub heads: Vec<HeadKind>,
    pub eps: Scalar,
}

impl RewardConfig {
    pub fn new(heads: Vec<HeadKind>, eps: Scalar) -> RewardConfig {
        assert!(eps > 0.0 && eps < 0.5, "epsilon must sit in (0, 0.5)");
        assert!(!heads.is_empty());
        RewardConfig { heads, eps }
    }
}

/// Score a finished episode with every reward head under its proper
/// conditioning (the blank instruction for BlankConditioning, the
/// episode's own instruction otherwise) and mix with equal weights.
/// Never consults the oracle channel.
pub fn reward_for_trajectory(
    disc: &Discriminator,
    cfg: &RewardConfig,
    traj: &Trajectory,
) -> Result<Scalar, GailError> {
    let kinds = disc.head_kinds();
    let blank = Instruction::blank();
    let needs_blank = cfg.heads.contains(&HeadKind::BlankConditioning);
    let mut items = vec![SeqRef { steps: &traj.steps, cond: &traj.instr.tokens }];
    if needs_blank {
        items.push(SeqRef { steps: &traj.steps, cond: &blank.tokens });
    }
    let scores = disc.score_data(&items);
    let mut ds = Vec::with_capacity(cfg.heads.len());
    for &h in &cfg.heads {
        let head_idx = kinds
            .iter()
            .position(|k| *k == h)
            .ok_or(GailError::HeadNotEnabled(h))?;
        let item_idx = usize::from(h == HeadKind::BlankConditioning && needs_blank);
        ds.push(scores[item_idx][head_idx]);
    }
    let r = terminal_reward(&ds, cfg.eps);
    if r.is_finite() {
        Ok(r)
    } else {
        Err(GailError::NonFinite("terminal reward"))
    }
}

#[derive(Debug, Clone)]
pub struct DiscTrainConfig {
    /// gradient steps per call (one call per policy update)
    pub grad_steps: usize,
    /// per-head balanced batch size
    pub batch_size: usize,
    pub eps: Scalar,
    pub adam: AdamConfig,
}

impl Default for DiscTrainConfig {
    fn default() -> Self {
        DiscTrainConfig { grad_steps: 4, batch_size: 64, eps: 1e-3, adam: AdamConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct HeadStats {
    pub kind: HeadKind,
    /// None when the head was skipped every step this round
    pub loss: Option<Scalar>,
    pub mean_pos: Scalar,
    pub mean_neg: Scalar,
}

fn mean_of(v: &[Scalar]) -> Scalar {
    v.iter().sum::<Scalar>() / v.len().max(1) as Scalar
}

/// Run `grad_steps` discriminator updates. Each step assembles one batch
/// per enabled head, forwards every distinct (trajectory, conditioning)
/// pair exactly once, applies each head's loss at its read points, and
/// takes one Adam step on the summed loss. Heads with an empty source
/// this round are skipped.
pub fn disc_update(
    disc: &mut Discriminator,
    b_agent: &TrajectoryBuffer,
    b_expert: &TrajectoryBuffer,
    pool: &InstructionSet,
    cfg: &DiscTrainConfig,
    rng: &mut Rng,
) -> Result<Vec<HeadStats>, GailError> {
    let kinds = disc.head_kinds();
    let mut stats: Vec<HeadStats> = kinds
        .iter()
        .map(|&kind| HeadStats { kind, loss: None, mean_pos: 0.0, mean_neg: 0.0 })
        .collect();
    for _ in 0..cfg.grad_steps {
        let mut batches = Vec::new();
        for &kind in &kinds {
            if let Some(b) = assemble_batch(kind, b_agent, b_expert, pool, rng, cfg.batch_size)? {
                batches.push((kind, b));
            }
        }
        if batches.is_empty() {
            continue;
        }

        // dedupe forwards across heads and sides: each head records its
        // read points against a shared list of unique (traj, cond) pairs
        fn resolve<'b>(
            items: &'b [SampledItem],
            keys: &mut HashMap<(Source, usize, Vec<u16>), usize>,
            uniq: &mut Vec<&'b SampledItem>,
        ) -> Vec<(usize, usize)> {
            items
                .iter()
                .map(|it| {
                    let next = uniq.len();
                    let slot = *keys
                        .entry((it.source, it.index, it.cond.tokens.clone()))
                        .or_insert(next);
                    if slot == next {
                        uniq.push(it);
                    }
                    (slot, it.len - 1)
                })
                .collect()
        }
        let mut keys: HashMap<(Source, usize, Vec<u16>), usize> = HashMap::new();
        let mut uniq: Vec<&SampledItem> = Vec::new();
        let mut point_sets: Vec<(HeadKind, Vec<(usize, usize)>, Vec<(usize, usize)>)> = Vec::new();
        for (kind, (pos, neg)) in &batches {
            let pos_pts = resolve(pos, &mut keys, &mut uniq);
            let neg_pts = resolve(neg, &mut keys, &mut uniq);
            point_sets.push((*kind, pos_pts, neg_pts));
        }

        let buffer_of = |s: Source| match s {
            Source::Agent => b_agent,
            Source::Expert => b_expert,
        };
        let seqs: Vec<SeqRef> = uniq
            .iter()
            .map(|it| SeqRef {
                steps: &buffer_of(it.source).get(it.index).steps,
                cond: &it.cond.tokens,
            })
            .collect();

        let mut tape = Tape::new();
        let bound = disc.bind(&mut tape);
        let run = bound.run(&mut tape, &seqs);
        let mut total: Option<NodeId> = None;
        let mut round: Vec<(HeadKind, Scalar, Scalar, Scalar)> = Vec::new();
        for (kind, pos_pts, neg_pts) in &point_sets {
            let pos_s = bound.head_scores(&mut tape, *kind, &run, pos_pts);
            let neg_s = bound.head_scores(&mut tape, *kind, &run, neg_pts);
            let loss = head_loss_node(&mut tape, pos_s, neg_s, cfg.eps);
            round.push((
                *kind,
                tape.value(loss),
                mean_of(tape.data(pos_s)),
                mean_of(tape.data(neg_s)),
            ));
            total = Some(match total {
                Some(t) => tape.add(t, loss),
                None => loss,
            });
        }
        let total = total.expect("at least one head had a batch");
        tape.backward(total)?;
        disc.store.zero_grads();
        disc.store.absorb(&tape);
        disc.store.adam_step(&cfg.adam);
        for (kind, loss, mp, mn) in round {
            let s = stats.iter_mut().find(|s| s.kind == kind).unwrap();
            s.loss = Some(loss);
            s.mean_pos = mp;
            s.mean_neg = mn;
        }
    }
    Ok(stats)
}

/// The tape version of `head_loss`: -mean log D over positives plus
/// -mean log(1-D) over negatives, scores clamped to [eps, 1-eps].
fn head_loss_node(tape: &mut Tape, pos: NodeId, neg: NodeId, eps: Scalar) -> NodeId {
    let pc = tape.clamp(pos, eps, 1.0 - eps);
    let pl = tape.log(pc);
    let pm = tape.mean(pl);
    let nc = tape.clamp(neg, eps, 1.0 - eps);
    let flipped = tape.mul_const(nc, -1.0);
    let one_minus = tape.add_const(flipped, 1.0);
    let nl = tape.log(one_minus);
    let nm = tape.mean(nl);
    let s = tape.add(pm, nm);
    tape.mul_const(s, -1.0)
}

/// Snapshot of the false-negative situation: how much of the agent buffer
/// the oracle calls successful, and how the scoring head rates experts vs
/// successful vs failed agent episodes.
#[derive(Debug, Clone)]
pub struct FnReport {
    /// oracle-successful agent trajectories / all agent trajectories
    pub fn_fraction: Scalar,
    pub mean_expert: Scalar,
    pub mean_agent_success: Option<Scalar>,
    pub mean_agent_fail: Option<Scalar>,
    pub n_agent: usize,
    pub n_agent_success: usize,
}

/// Compute the diagnostic using `head` (normally Conventional, or the
/// OracleFiltered head in OF mode). Scores at most `cap` trajectories per
/// stratum — the most recent agent episodes and a random expert sample.
pub fn fn_diagnostic(
    disc: &Discriminator,
    b_agent: &TrajectoryBuffer,
    b_expert: &TrajectoryBuffer,
    head: HeadKind,
    cap: usize,
    rng: &mut Rng,
) -> Result<FnReport, GailError> {
    let kinds = disc.head_kinds();
    let head_idx = kinds
        .iter()
        .position(|k| *k == head)
        .ok_or(GailError::HeadNotEnabled(head))?;

    let n_agent = b_agent.len();
    let n_success = b_agent.iter().filter(|t| t.oracle_success).count();
    let fn_fraction =
        if n_agent == 0 { 0.0 } else { n_success as Scalar / n_agent as Scalar };

    let score_set = |items: Vec<&Trajectory>| -> Vec<Scalar> {
        if items.is_empty() {
            return Vec::new();
        }
        let refs: Vec<SeqRef> = items
            .iter()
            .map(|t| SeqRef { steps: &t.steps, cond: &t.instr.tokens })
            .collect();
        disc.score_data(&refs).iter().map(|s| s[head_idx]).collect()
    };

    let mut expert_sample: Vec<&Trajectory> = Vec::new();
    for _ in 0..cap.min(b_expert.len()) {
        expert_sample.push(b_expert.get(rng.gen_range(0..b_expert.len())));
    }
    // most recent agent episodes reflect the current policy
    let recent: Vec<&Trajectory> = b_agent
        .iter()
        .rev()
        .take(2 * cap)
        .collect();
    let succ: Vec<&Trajectory> =
        recent.iter().filter(|t| t.oracle_success).take(cap).copied().collect();
    let fail: Vec<&Trajectory> =
        recent.iter().filter(|t| !t.oracle_success).take(cap).copied().collect();

    let e = score_set(expert_sample);
    let s = score_set(succ);
    let f = score_set(fail);
    Ok(FnReport {
        fn_fraction,
        mean_expert: mean_of(&e),
        mean_agent_success: if s.is_empty() { None } else { Some(mean_of(&s)) },
        mean_agent_fail: if f.is_empty() { None } else { Some(mean_of(&f)) },
        n_agent,
        n_agent_success: n_success,
    })
}
