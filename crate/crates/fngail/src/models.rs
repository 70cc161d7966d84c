//! Policy and discriminator networks. Both share the same trunk shape: a
//! GRU encodes the instruction, two FiLM-conditioned conv blocks encode the
//! egocentric view, and an LSTM carries memory along the episode. The
//! discriminator additionally feeds the chosen action into its LSTM and
//! reads per-head MLP scores off hidden states.

use crate::autodiff::layers::{
    zero_state, BoundConv3x3, BoundEmbedding, BoundGru, BoundLinear, BoundLstm, BoundMlp3,
    Conv3x3, Embedding, GruCell, Linear, LstmCell, Mlp3,
};
use crate::autodiff::{NodeId, ParameterStore, Tape};
use crate::env::{Action, Observation, VIEW};
use crate::gail::HeadKind;
use crate::lang;
use crate::rng;
use crate::Scalar;

pub const KIND_CHANNELS: usize = 5;
pub const COLOR_CHANNELS: usize = 6;
/// kind one-hot + color one-hot + occlusion flag, per cell
pub const OBS_CHANNELS: usize = KIND_CHANNELS + COLOR_CHANNELS + 1;
/// carried kind one-hot + carried color one-hot
pub const CARRY_DIM: usize = KIND_CHANNELS + COLOR_CHANNELS;
pub const CELLS: usize = VIEW * VIEW;
const NORM_EPS: Scalar = 1e-3;

/// Network widths. `desk` is the default used by experiments; `tiny` keeps
/// unit tests fast; `paper_scale` widens the memory LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Profile {
    pub embed: usize,
    pub gru: usize,
    pub conv: usize,
    pub lstm: usize,
}

impl Profile {
    pub fn desk() -> Profile {
        Profile { embed: 16, gru: 32, conv: 16, lstm: 64 }
    }

    pub fn paper_scale() -> Profile {
        Profile { embed: 16, gru: 32, conv: 16, lstm: 128 }
    }

    pub fn tiny() -> Profile {
        Profile { embed: 4, gru: 8, conv: 4, lstm: 16 }
    }

    pub fn by_name(name: &str) -> Option<Profile> {
        match name {
            "desk" => Some(Profile::desk()),
            "paper" => Some(Profile::paper_scale()),
            "tiny" => Some(Profile::tiny()),
            _ => None,
        }
    }
}

/// One-hot a single egocentric view into `out` (len CELLS * OBS_CHANNELS).
/// Occluded cells light only the occlusion flag; colors light only for
/// actual objects.
pub fn grid_onehot(obs: &Observation, out: &mut [Scalar]) {
    debug_assert_eq!(out.len(), CELLS * OBS_CHANNELS);
    for (ci, cell) in obs.grid.iter().flatten().enumerate() {
        let [kind, color, occ] = *cell;
        let base = ci * OBS_CHANNELS;
        if occ == 1 {
            out[base + OBS_CHANNELS - 1] = 1.0;
        } else {
            out[base + kind as usize] = 1.0;
            if kind >= 2 {
                out[base + KIND_CHANNELS + color as usize] = 1.0;
            }
        }
    }
}

/// One-hot the carried-object slot (len CARRY_DIM). Kind 0 means empty
/// hands; colors light only when something is held.
pub fn carried_onehot(obs: &Observation, out: &mut [Scalar]) {
    debug_assert_eq!(out.len(), CARRY_DIM);
    let (kind, color) = obs.carrying;
    out[kind as usize] = 1.0;
    if kind >= 2 {
        out[KIND_CHANNELS + color as usize] = 1.0;
    }
}

pub fn batch_grid_onehot(views: &[&Observation]) -> Vec<Scalar> {
    let mut out = vec![0.0; views.len() * CELLS * OBS_CHANNELS];
    for (i, v) in views.iter().enumerate() {
        grid_onehot(v, &mut out[i * CELLS * OBS_CHANNELS..(i + 1) * CELLS * OBS_CHANNELS]);
    }
    out
}

pub fn batch_carried_onehot(views: &[&Observation]) -> Vec<Scalar> {
    let mut out = vec![0.0; views.len() * CARRY_DIM];
    for (i, v) in views.iter().enumerate() {
        carried_onehot(v, &mut out[i * CARRY_DIM..(i + 1) * CARRY_DIM]);
    }
    out
}

/// Instruction encoder + conditioned conv stack + pre-memory projection,
/// shared verbatim between the policy and the discriminator (separate
/// parameter sets, same wiring).
struct Trunk {
    emb: Embedding,
    gru: GruCell,
    conv1: Conv3x3,
    film1: Linear,
    conv2: Conv3x3,
    film2: Linear,
    pre: Linear,
    profile: Profile,
}

pub struct BoundTrunk {
    emb: BoundEmbedding,
    gru: BoundGru,
    conv1: BoundConv3x3,
    film1: BoundLinear,
    conv2: BoundConv3x3,
    film2: BoundLinear,
    pre: BoundLinear,
    profile: Profile,
}

pub struct FilmParams {
    pub scale1: NodeId,
    pub shift1: NodeId,
    pub scale2: NodeId,
    pub shift2: NodeId,
}

impl Trunk {
    fn new(store: &mut ParameterStore, p: Profile, rng: &mut rng::Rng) -> Trunk {
        Trunk {
            emb: Embedding::new(store, "instr.emb", lang::VOCAB.len(), p.embed, rng),
            gru: GruCell::new(store, "instr.gru", p.embed, p.gru, rng),
            conv1: Conv3x3::new(store, "conv1", OBS_CHANNELS, p.conv, rng),
            // zero film generators: conditioning starts as the identity
            film1: Linear::new_zeroed(store, "film1", p.gru, 2 * p.conv),
            conv2: Conv3x3::new(store, "conv2", p.conv, p.conv, rng),
            film2: Linear::new_zeroed(store, "film2", p.gru, 2 * p.conv),
            pre: Linear::new(store, "pre", CELLS * p.conv + CARRY_DIM, p.lstm, rng),
            profile: p,
        }
    }

    fn bind(&self, tape: &mut Tape, store: &ParameterStore) -> BoundTrunk {
        BoundTrunk {
            emb: self.emb.bind(tape, store),
            gru: self.gru.bind(tape, store),
            conv1: self.conv1.bind(tape, store),
            film1: self.film1.bind(tape, store),
            conv2: self.conv2.bind(tape, store),
            film2: self.film2.bind(tape, store),
            pre: self.pre.bind(tape, store),
            profile: self.profile,
        }
    }
}

impl BoundTrunk {
    /// Run the GRU over token sequences (right-padded; rows stop updating
    /// past their own length). Returns the final hidden per row [B, gru].
    pub fn encode_instructions(&self, tape: &mut Tape, seqs: &[&[u16]]) -> NodeId {
        let b = seqs.len();
        assert!(b > 0);
        let t_max = seqs.iter().map(|s| s.len()).max().unwrap().max(1);
        let mut h = zero_state(tape, b, self.profile.gru);
        for t in 0..t_max {
            let ids: Vec<usize> =
                seqs.iter().map(|s| *s.get(t).unwrap_or(&(lang::BLANK_ID)) as usize).collect();
            let x = self.emb.fwd(tape, &ids);
            let stepped = self.gru.step(tape, x, h);
            let mask: Vec<Scalar> =
                seqs.iter().map(|s| if t < s.len() { 1.0 } else { 0.0 }).collect();
            if mask.iter().all(|&m| m == 1.0) {
                h = stepped;
            } else {
                let diff = tape.sub(stepped, h);
                let m = tape.leaf(&[b, 1], mask);
                let upd = tape.row_scale(diff, m);
                h = tape.add(h, upd);
            }
        }
        h
    }

    /// Per-sample FiLM scales/shifts from the instruction encoding;
    /// computed once per batch and reused every timestep.
    pub fn film_params(&self, tape: &mut Tape, instr_enc: NodeId) -> FilmParams {
        let c = self.profile.conv;
        let f1 = self.film1.fwd(tape, instr_enc);
        let f2 = self.film2.fwd(tape, instr_enc);
        FilmParams {
            scale1: tape.slice_cols(f1, 0, c),
            shift1: tape.slice_cols(f1, c, c),
            scale2: tape.slice_cols(f2, 0, c),
            shift2: tape.slice_cols(f2, c, c),
        }
    }

    /// Conv stack + carried slot -> memory-LSTM input features [B, lstm].
    pub fn features(
        &self,
        tape: &mut Tape,
        grid: NodeId,
        carried: NodeId,
        film: &FilmParams,
    ) -> NodeId {
        let b = tape.shape(grid)[0];
        let x = self.conv1.fwd(tape, grid, VIEW, VIEW);
        let x = tape.instance_norm(x, NORM_EPS);
        let x = tape.film_affine(x, film.scale1, film.shift1);
        let x = tape.relu(x);
        let x = self.conv2.fwd(tape, x, VIEW, VIEW);
        let x = tape.instance_norm(x, NORM_EPS);
        let x = tape.film_affine(x, film.scale2, film.shift2);
        let x = tape.relu(x);
        let flat = tape.reshape(x, &[b, CELLS * self.profile.conv]);
        let cat = tape.concat_cols(&[flat, carried]);
        let f = self.pre.fwd(tape, cat);
        tape.relu(f)
    }
}

/// Recurrent memory carried across env steps as plain numbers (one row per
/// lane), so rollouts can run on short throwaway tapes.
#[derive(Clone)]
pub struct LaneMemory {
    pub h: Vec<Scalar>,
    pub c: Vec<Scalar>,
    pub lanes: usize,
    pub width: usize,
}

impl LaneMemory {
    pub fn zeros(lanes: usize, width: usize) -> LaneMemory {
        LaneMemory { h: vec![0.0; lanes * width], c: vec![0.0; lanes * width], lanes, width }
    }

    pub fn reset_lane(&mut self, lane: usize) {
        self.h[lane * self.width..(lane + 1) * self.width].fill(0.0);
        self.c[lane * self.width..(lane + 1) * self.width].fill(0.0);
    }
}

pub struct ActorCritic {
    pub store: ParameterStore,
    pub profile: Profile,
    trunk: Trunk,
    lstm: LstmCell,
    actor: Linear,
    critic: Linear,
}

pub struct BoundActorCritic {
    pub trunk: BoundTrunk,
    lstm: BoundLstm,
    actor: BoundLinear,
    critic: BoundLinear,
}

pub struct PolicyStep {
    pub logits: NodeId,
    pub value: NodeId,
    pub h: NodeId,
    pub c: NodeId,
}

impl ActorCritic {
    pub fn new(profile: Profile, seed: u64) -> ActorCritic {
        let mut store = ParameterStore::new();
        let mut r = rng::stream(seed, "actor-init", 0);
        let trunk = Trunk::new(&mut store, profile, &mut r);
        let lstm = LstmCell::new(&mut store, "mem", profile.lstm, profile.lstm, &mut r);
        // zero heads: a fresh policy is exactly uniform, a fresh critic
        // predicts exactly zero
        let actor = Linear::new_zeroed(&mut store, "actor", profile.lstm, Action::COUNT);
        let critic = Linear::new_zeroed(&mut store, "critic", profile.lstm, 1);
        ActorCritic { store, profile, trunk, lstm, actor, critic }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundActorCritic {
        BoundActorCritic {
            trunk: self.trunk.bind(tape, &self.store),
            lstm: self.lstm.bind(tape, &self.store),
            actor: self.actor.bind(tape, &self.store),
            critic: self.critic.bind(tape, &self.store),
        }
    }

    /// Instruction encodings as plain numbers (for rollout/eval loops that
    /// hold them fixed per episode).
    pub fn encode_instructions_data(&self, seqs: &[&[u16]]) -> Vec<Scalar> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let enc = bound.trunk.encode_instructions(&mut tape, seqs);
        tape.data(enc).to_vec()
    }

    /// One forward step for every lane, no gradients: returns (logits
    /// [B*actions], values [B]) and advances `mem` in place.
    pub fn act_data(
        &self,
        views: &[&Observation],
        instr_enc: &[Scalar],
        mem: &mut LaneMemory,
    ) -> (Vec<Scalar>, Vec<Scalar>) {
        let b = views.len();
        assert_eq!(b, mem.lanes);
        assert_eq!(instr_enc.len(), b * self.profile.gru);
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let grid = tape.leaf(&[b, CELLS, OBS_CHANNELS], batch_grid_onehot(views));
        let car = tape.leaf(&[b, CARRY_DIM], batch_carried_onehot(views));
        let enc = tape.leaf(&[b, self.profile.gru], instr_enc.to_vec());
        let film = bound.trunk.film_params(&mut tape, enc);
        let feats = bound.trunk.features(&mut tape, grid, car, &film);
        let h = tape.leaf(&[b, self.profile.lstm], mem.h.clone());
        let c = tape.leaf(&[b, self.profile.lstm], mem.c.clone());
        let step = bound.step(&mut tape, feats, h, c);
        mem.h.copy_from_slice(tape.data(step.h));
        mem.c.copy_from_slice(tape.data(step.c));
        (tape.data(step.logits).to_vec(), tape.data(step.value).to_vec())
    }
}

impl BoundActorCritic {
    pub fn step(&self, tape: &mut Tape, feats: NodeId, h: NodeId, c: NodeId) -> PolicyStep {
        let (h2, c2) = self.lstm.step(tape, feats, h, c);
        PolicyStep {
            logits: self.actor.fwd(tape, h2),
            value: self.critic.fwd(tape, h2),
            h: h2,
            c: c2,
        }
    }
}

/// One (trajectory, conditioning instruction) pair for the discriminator.
#[derive(Clone, Copy)]
pub struct SeqRef<'a> {
    pub steps: &'a [(Observation, Action)],
    pub cond: &'a [u16],
}

pub struct Discriminator {
    pub store: ParameterStore,
    pub profile: Profile,
    trunk: Trunk,
    lstm: LstmCell,
    heads: Vec<(HeadKind, Mlp3)>,
}

pub struct BoundDisc {
    pub trunk: BoundTrunk,
    lstm: BoundLstm,
    heads: Vec<(HeadKind, BoundMlp3)>,
    profile: Profile,
}

/// Hidden states from one batched trunk run; heads read scores off them.
pub struct DiscRun {
    states: Vec<NodeId>,
    pub batch: usize,
}

impl Discriminator {
    pub fn new(profile: Profile, heads: &[HeadKind], seed: u64) -> Discriminator {
        let mut store = ParameterStore::new();
        let mut r = rng::stream(seed, "disc-init", 0);
        let trunk = Trunk::new(&mut store, profile, &mut r);
        let lstm = LstmCell::new(
            &mut store,
            "mem",
            profile.lstm + Action::COUNT,
            profile.lstm,
            &mut r,
        );
        let mut built = Vec::new();
        for &kind in heads {
            assert!(
                built.iter().all(|(k, _)| *k != kind),
                "duplicate discriminator head {kind:?}"
            );
            let name = format!("head.{}", kind.tag());
            built.push((kind, Mlp3::new(&mut store, &name, profile.lstm, profile.lstm, 1, &mut r)));
        }
        Discriminator { store, profile, trunk, lstm, heads: built }
    }

    pub fn head_kinds(&self) -> Vec<HeadKind> {
        self.heads.iter().map(|(k, _)| *k).collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundDisc {
        BoundDisc {
            trunk: self.trunk.bind(tape, &self.store),
            lstm: self.lstm.bind(tape, &self.store),
            heads: self
                .heads
                .iter()
                .map(|(k, m)| (*k, m.bind(tape, &self.store)))
                .collect(),
            profile: self.profile,
        }
    }

    /// Final-step scores for each item, one value per enabled head (same
    /// order as `head_kinds`). No gradients; used on the reward path.
    pub fn score_data(&self, items: &[SeqRef]) -> Vec<Vec<Scalar>> {
        if items.is_empty() {
            return Vec::new();
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let run = bound.run(&mut tape, items);
        let pts: Vec<(usize, usize)> =
            items.iter().enumerate().map(|(i, s)| (i, s.steps.len() - 1)).collect();
        let kinds = self.head_kinds();
        let mut per_head = Vec::with_capacity(kinds.len());
        for kind in kinds {
            let s = bound.head_scores(&mut tape, kind, &run, &pts);
            per_head.push(tape.data(s).to_vec());
        }
        (0..items.len()).map(|i| per_head.iter().map(|h| h[i]).collect()).collect()
    }
}

impl BoundDisc {
    /// Run the trunk + memory LSTM over a padded batch of sequences. Rows
    /// past their own length compute garbage that no read point touches.
    pub fn run(&self, tape: &mut Tape, items: &[SeqRef]) -> DiscRun {
        let b = items.len();
        assert!(b > 0);
        for it in items {
            assert!(!it.steps.is_empty(), "discriminator sequences must be non-empty");
        }
        let t_max = items.iter().map(|s| s.steps.len()).max().unwrap();
        let conds: Vec<&[u16]> = items.iter().map(|s| s.cond).collect();
        let enc = self.trunk.encode_instructions(tape, &conds);
        let film = self.trunk.film_params(tape, enc);
        let mut h = zero_state(tape, b, self.profile.lstm);
        let mut c = zero_state(tape, b, self.profile.lstm);
        let mut states = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let views: Vec<&Observation> = items
                .iter()
                .map(|s| &s.steps[t.min(s.steps.len() - 1)].0)
                .collect();
            let actions: Vec<usize> = items
                .iter()
                .map(|s| s.steps[t.min(s.steps.len() - 1)].1.id() as usize)
                .collect();
            let grid = tape.leaf(&[b, CELLS, OBS_CHANNELS], batch_grid_onehot(&views));
            let car = tape.leaf(&[b, CARRY_DIM], batch_carried_onehot(&views));
            let feats = self.trunk.features(tape, grid, car, &film);
            let act = tape.one_hot(&actions, Action::COUNT);
            let x = tape.concat_cols(&[feats, act]);
            let (h2, c2) = self.lstm.step(tape, x, h, c);
            h = h2;
            c = c2;
            states.push(h);
        }
        DiscRun { states, batch: b }
    }

    /// Sigmoid scores of one head at the given (item, step) read points,
    /// returned in the callers' order as [N, 1].
    pub fn head_scores(
        &self,
        tape: &mut Tape,
        kind: HeadKind,
        run: &DiscRun,
        pts: &[(usize, usize)],
    ) -> NodeId {
        assert!(!pts.is_empty());
        let mlp = &self
            .heads
            .iter()
            .find(|(k, _)| *k == kind)
            .unwrap_or_else(|| panic!("head {kind:?} not enabled"))
            .1;
        for &(i, t) in pts {
            assert!(i < run.batch && t < run.states.len(), "read point out of range");
        }
        // group reads by timestep so each step contributes one gather
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.sort_by_key(|&i| (pts[i].1, pts[i].0));
        let mut chunks: Vec<NodeId> = Vec::new();
        let mut k = 0;
        while k < order.len() {
            let t = pts[order[k]].1;
            let mut rows = Vec::new();
            while k < order.len() && pts[order[k]].1 == t {
                rows.push(pts[order[k]].0);
                k += 1;
            }
            chunks.push(tape.gather_rows(run.states[t], &rows));
        }
        let stacked = if chunks.len() == 1 { chunks[0] } else { tape.concat_rows(&chunks) };
        let logits = mlp.fwd(tape, stacked);
        // undo the sort: row j of `stacked` is original point order[j]
        let mut perm = vec![0usize; pts.len()];
        for (j, &orig) in order.iter().enumerate() {
            perm[orig] = j;
        }
        let reordered = tape.gather_rows(logits, &perm);
        tape.sigmoid(reordered)
    }

    /// Scores at every item's final step.
    pub fn final_scores(&self, tape: &mut Tape, kind: HeadKind, run: &DiscRun, items: &[SeqRef]) -> NodeId {
        let pts: Vec<(usize, usize)> =
            items.iter().enumerate().map(|(i, s)| (i, s.steps.len() - 1)).collect();
        self.head_scores(tape, kind, run, &pts)
    }
}
