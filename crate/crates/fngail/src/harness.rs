//! Experiment plumbing: flat key=value configs with CLI overrides, the
//! FNGD demo file format, append-only metrics CSV, batched greedy
//! evaluation, the BC/GAIL training drivers, and the false-negative
//! diagnosis entry point. One process runs one experiment; seeds get
//! their own subdirectories and never share state beyond the filesystem.

use crate::autodiff::CheckpointError;
use crate::bc::{bc_train, BcConfig};
use crate::bot;
use crate::env::{self, Action, EndCause, EnvError, Observation, TaskSpec, WorldState};
use crate::gail::{
    self, DemoSet, DiscTrainConfig, FnReport, GailError, HeadKind, RewardConfig, Source,
    Trajectory, TrajectoryBuffer,
};
use crate::lang::{self, Instruction, InstructionSet};
use crate::models::{ActorCritic, Discriminator, LaneMemory, Profile};
use crate::ppo::{collect_rollouts, ppo_update, LaneSet, PpoConfig, PpoError};
use crate::rng;
use crate::Scalar;
use rand::seq::SliceRandom;
use std::cell::{Cell, RefCell};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("demo file error: {0}")]
    Demo(#[from] DemoIoError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Gail(#[from] GailError),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Bot(#[from] bot::BotError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Bc,
    Gail,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Bc => "bc",
            Algo::Gail => "gail",
        }
    }
}

/// Everything one training run needs, resolvable from a flat key=value
/// file plus command-line overrides.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: String,
    pub demos: PathBuf,
    pub demo_fraction: (u32, u32),
    pub algo: Algo,
    pub heads: Vec<HeadKind>,
    pub done_termination: bool,
    pub seeds: Vec<u64>,
    pub budget_minutes: f64,
    pub eval_cadence: usize,
    pub eval_episodes: usize,
    pub profile: String,
    pub max_updates: usize,
    pub out_dir: PathBuf,
    pub eps: Scalar,
    pub agent_capacity: usize,
    pub lanes: usize,
    pub rollout_len: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: String::new(),
            demos: PathBuf::new(),
            demo_fraction: (1, 1),
            algo: Algo::Gail,
            heads: vec![HeadKind::Conventional],
            done_termination: true,
            seeds: vec![1, 2, 3],
            budget_minutes: 60.0,
            eval_cadence: 100,
            eval_episodes: 500,
            profile: "desk".into(),
            max_updates: 100_000,
            out_dir: PathBuf::from("runs/experiment"),
            eps: 1e-3,
            agent_capacity: 512,
            lanes: 64,
            rollout_len: 40,
        }
    }
}

/// Demo budgets at which plain behavioral cloning reaches >= 99% greedy
/// success (500-episode eval, desk profile) on each mini task. Calibrated
/// on this implementation; downstream experiments size their corpora as
/// fractions of these.
pub const BC_DEMO_BUDGETS: &[(&str, usize)] = &[
    ("gotoredball-mini", 4000),
    ("gotolocal-mini", 8000),
    ("pickuploc-mini", 12000),
    ("putnextlocal-mini", 16000),
];

pub fn bc_demo_budget(task: &str) -> Option<usize> {
    BC_DEMO_BUDGETS.iter().find(|(t, _)| *t == task).map(|&(_, n)| n)
}

/// Head combinations the trainer accepts: the fake-conditioning bases
/// with optional auxiliaries, plus the three single-head references.
pub fn valid_head_sets() -> Vec<Vec<HeadKind>> {
    let mut out = vec![
        vec![HeadKind::Conventional],
        vec![HeadKind::OracleFiltered],
        vec![HeadKind::SubTrajectory],
    ];
    let bases: [&[HeadKind]; 3] = [
        &[HeadKind::AgentFc],
        &[HeadKind::ExpertFc],
        &[HeadKind::AgentFc, HeadKind::ExpertFc],
    ];
    for base in bases {
        for done_detector in [false, true] {
            for blank in [false, true] {
                let mut set = base.to_vec();
                if done_detector {
                    set.push(HeadKind::DoneDetector);
                }
                if blank {
                    set.push(HeadKind::BlankConditioning);
                }
                out.push(set);
            }
        }
    }
    out
}

fn head_set_key(heads: &[HeadKind]) -> Vec<&'static str> {
    let mut tags: Vec<&'static str> = heads.iter().map(|h| h.tag()).collect();
    tags.sort_unstable();
    tags.dedup();
    tags
}

impl ExperimentConfig {
    /// Apply one key=value pair (from a config file or a CLI flag).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let bad = |what: &str| HarnessError::Config(format!("bad {what}: {value:?}"));
        match key {
            "task" => self.task = value.to_string(),
            "demos" => self.demos = PathBuf::from(value),
            "demo_fraction" => {
                self.demo_fraction = match value {
                    "1" => (1, 1),
                    "1/8" => (1, 8),
                    "1/64" => (1, 64),
                    _ => return Err(bad("demo_fraction (want 1, 1/8, or 1/64)")),
                }
            }
            "algo" => {
                self.algo = match value {
                    "bc" => Algo::Bc,
                    "gail" => Algo::Gail,
                    _ => return Err(bad("algo (want bc or gail)")),
                }
            }
            "heads" => {
                let mut heads = Vec::new();
                for tag in value.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                    heads.push(
                        HeadKind::from_tag(tag)
                            .ok_or_else(|| bad(&format!("head tag {tag:?}")))?,
                    );
                }
                self.heads = heads;
            }
            "done_termination" => {
                self.done_termination =
                    value.parse().map_err(|_| bad("done_termination (want true/false)"))?
            }
            "seeds" => {
                let seeds: Result<Vec<u64>, _> =
                    value.split(',').map(|s| s.trim().parse()).collect();
                self.seeds = seeds.map_err(|_| bad("seeds"))?;
            }
            "budget_minutes" => {
                self.budget_minutes = value.parse().map_err(|_| bad("budget_minutes"))?
            }
            "eval_cadence" => {
                self.eval_cadence = value.parse().map_err(|_| bad("eval_cadence"))?
            }
            "eval_episodes" => {
                self.eval_episodes = value.parse().map_err(|_| bad("eval_episodes"))?
            }
            "profile" => self.profile = value.to_string(),
            "max_updates" => self.max_updates = value.parse().map_err(|_| bad("max_updates"))?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "eps" => self.eps = value.parse().map_err(|_| bad("eps"))?,
            "agent_capacity" => {
                self.agent_capacity = value.parse().map_err(|_| bad("agent_capacity"))?
            }
            "lanes" => self.lanes = value.parse().map_err(|_| bad("lanes"))?,
            "rollout_len" => self.rollout_len = value.parse().map_err(|_| bad("rollout_len"))?,
            "seed" => {
                // convenience singular form used by per-seed run dirs
                self.seeds = vec![value.parse().map_err(|_| bad("seed"))?];
            }
            _ => return Err(HarnessError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` file ('#' starts a comment).
    pub fn apply_file(&mut self, text: &str) -> Result<(), HarnessError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| {
                    HarnessError::Config(format!("line {}: expected key = value", lineno + 1))
                })?;
            self.apply(k.trim(), v.trim())
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        if env::preset(&self.task).is_none() {
            return err(format!(
                "unknown task {:?}; presets: {}",
                self.task,
                env::PRESET_NAMES.join(", ")
            ));
        }
        if Profile::by_name(&self.profile).is_none() {
            return err(format!("unknown profile {:?} (want desk, paper, or tiny)", self.profile));
        }
        if self.seeds.is_empty() {
            return err("need at least one seed".into());
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return err(format!("eps must be in (0, 0.5), got {}", self.eps));
        }
        if self.eval_cadence == 0 || self.eval_episodes == 0 || self.max_updates == 0 {
            return err("eval_cadence, eval_episodes, max_updates must be positive".into());
        }
        if self.lanes == 0 || self.rollout_len == 0 || self.agent_capacity == 0 {
            return err("lanes, rollout_len, agent_capacity must be positive".into());
        }
        if self.algo == Algo::Gail {
            let key = head_set_key(&self.heads);
            let ok = valid_head_sets().iter().any(|s| head_set_key(s) == key);
            if !ok {
                let mut valid = String::new();
                for s in valid_head_sets() {
                    let _ = writeln!(valid, "  {}", head_set_key(&s).join(","));
                }
                return err(format!(
                    "head set {:?} is not a supported combination; valid sets:\n{valid}",
                    head_set_key(&self.heads).join(",")
                ));
            }
        }
        Ok(())
    }

    /// Stable key=value rendering; `apply_file` of the output reproduces
    /// the config.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task = {}", self.task);
        let _ = writeln!(s, "demos = {}", self.demos.display());
        let frac = match self.demo_fraction {
            (1, 1) => "1".to_string(),
            (n, d) => format!("{n}/{d}"),
        };
        let _ = writeln!(s, "demo_fraction = {frac}");
        let _ = writeln!(s, "algo = {}", self.algo.name());
        let tags: Vec<&str> = self.heads.iter().map(|h| h.tag()).collect();
        let _ = writeln!(s, "heads = {}", tags.join(","));
        let _ = writeln!(s, "done_termination = {}", self.done_termination);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "budget_minutes = {}", self.budget_minutes);
        let _ = writeln!(s, "eval_cadence = {}", self.eval_cadence);
        let _ = writeln!(s, "eval_episodes = {}", self.eval_episodes);
        let _ = writeln!(s, "profile = {}", self.profile);
        let _ = writeln!(s, "max_updates = {}", self.max_updates);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "eps = {}", self.eps);
        let _ = writeln!(s, "agent_capacity = {}", self.agent_capacity);
        let _ = writeln!(s, "lanes = {}", self.lanes);
        let _ = writeln!(s, "rollout_len = {}", self.rollout_len);
        s
    }
}

// ---------------------------------------------------------------- demo IO

#[derive(Debug, Error)]
pub enum DemoIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic (not a demo file)")]
    BadMagic,
    #[error("unsupported demo format version {0}")]
    BadVersion(u16),
    #[error("vocab table does not match this build")]
    VocabMismatch,
    #[error("file truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("invalid action byte {value} at byte {offset}")]
    BadAction { offset: usize, value: u8 },
    #[error("invalid instruction tokens at byte {offset}")]
    BadInstruction { offset: usize },
    #[error("{extra} trailing bytes after the last demo")]
    TrailingBytes { extra: usize },
}

pub const DEMO_MAGIC: &[u8; 4] = b"FNGD";
pub const DEMO_VERSION: u16 = 1;
const OBS_BYTES: usize = env::VIEW * env::VIEW * 3;

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    assert!(s.len() <= u16::MAX as usize);
    put_u16(buf, s.len() as u16);
    buf.extend_from_slice(s.as_bytes());
}

/// Serialize a demo corpus. Only expert-valid trajectories are writable:
/// every demo must end in Done, satisfy the oracle, and be expert-sourced.
pub fn write_demos_bytes(set: &DemoSet) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DEMO_MAGIC);
    put_u16(&mut buf, DEMO_VERSION);
    put_str(&mut buf, &set.task_name);
    put_u16(&mut buf, lang::VOCAB.len() as u16);
    for w in lang::VOCAB {
        put_str(&mut buf, w);
    }
    assert!(set.demos.len() <= u32::MAX as usize);
    buf.extend_from_slice(&(set.demos.len() as u32).to_le_bytes());
    for demo in &set.demos {
        assert!(
            demo.source == Source::Expert
                && demo.end == EndCause::Done
                && demo.oracle_success
                && !demo.is_empty(),
            "only finished expert demos belong in a demo file"
        );
        assert!(demo.instr.tokens.len() <= u16::MAX as usize);
        put_u16(&mut buf, demo.instr.tokens.len() as u16);
        for &t in &demo.instr.tokens {
            put_u16(&mut buf, t);
        }
        assert!(demo.len() <= u16::MAX as usize);
        put_u16(&mut buf, demo.len() as u16);
        for (obs, action) in &demo.steps {
            for row in &obs.grid {
                for cell in row {
                    buf.extend_from_slice(cell);
                }
            }
            buf.push(action.id());
            buf.push(obs.carrying.0);
            buf.push(obs.carrying.1);
        }
    }
    buf
}

struct DemoReader<'a> {
    buf: &'a [u8],
    off: usize,
}

impl<'a> DemoReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DemoIoError> {
        if self.off + n > self.buf.len() {
            return Err(DemoIoError::Truncated { offset: self.buf.len() });
        }
        let s = &self.buf[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DemoIoError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DemoIoError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DemoIoError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn str(&mut self) -> Result<String, DemoIoError> {
        let off = self.off;
        let n = self.u16()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| DemoIoError::BadInstruction { offset: off })
    }
}

pub fn read_demos_bytes(buf: &[u8]) -> Result<DemoSet, DemoIoError> {
    let mut r = DemoReader { buf, off: 0 };
    if r.take(4)? != DEMO_MAGIC {
        return Err(DemoIoError::BadMagic);
    }
    let version = r.u16()?;
    if version != DEMO_VERSION {
        return Err(DemoIoError::BadVersion(version));
    }
    let task_name = r.str()?;
    let vocab_len = r.u16()? as usize;
    if vocab_len != lang::VOCAB.len() {
        return Err(DemoIoError::VocabMismatch);
    }
    for expect in lang::VOCAB {
        if r.str()? != expect {
            return Err(DemoIoError::VocabMismatch);
        }
    }
    let count = r.u32()? as usize;
    let mut demos = Vec::with_capacity(count);
    for _ in 0..count {
        let instr_off = r.off;
        let ntok = r.u16()? as usize;
        let mut tokens = Vec::with_capacity(ntok);
        for _ in 0..ntok {
            tokens.push(r.u16()?);
        }
        let instr = Instruction::from_tokens(tokens)
            .map_err(|_| DemoIoError::BadInstruction { offset: instr_off })?;
        let nsteps = r.u16()? as usize;
        let mut steps = Vec::with_capacity(nsteps);
        for _ in 0..nsteps {
            let mut obs = Observation::zeros();
            let raw = r.take(OBS_BYTES)?;
            let mut i = 0;
            for row in obs.grid.iter_mut() {
                for cell in row.iter_mut() {
                    cell.copy_from_slice(&raw[i..i + 3]);
                    i += 3;
                }
            }
            let act_off = r.off;
            let a = r.u8()?;
            let action = Action::from_id(a)
                .ok_or(DemoIoError::BadAction { offset: act_off, value: a })?;
            obs.carrying = (r.u8()?, r.u8()?);
            steps.push((obs, action));
        }
        demos.push(Trajectory {
            instr,
            steps,
            end: EndCause::Done,
            oracle_success: true,
            source: Source::Expert,
        });
    }
    if r.off != buf.len() {
        return Err(DemoIoError::TrailingBytes { extra: buf.len() - r.off });
    }
    Ok(DemoSet { task_name, demos })
}

pub fn write_demos(path: &Path, set: &DemoSet) -> Result<(), DemoIoError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, write_demos_bytes(set))?;
    Ok(())
}

pub fn read_demos(path: &Path) -> Result<DemoSet, DemoIoError> {
    read_demos_bytes(&fs::read(path)?)
}

/// Deterministic subset selection: the same (seed, fraction) always
/// keeps the same demos, in their original order.
pub fn subsample_demos(demos: &[Trajectory], fraction: (u32, u32), seed: u64) -> Vec<Trajectory> {
    let (num, den) = fraction;
    assert!(num >= 1 && den >= 1 && num <= den);
    if num == den {
        return demos.to_vec();
    }
    let keep = ((demos.len() as u64 * num as u64) / den as u64).max(1) as usize;
    let mut idx: Vec<usize> = (0..demos.len()).collect();
    let mut r = rng::stream(seed, "demo-subsample", 0);
    idx.shuffle(&mut r);
    idx.truncate(keep);
    idx.sort_unstable();
    idx.into_iter().map(|i| demos[i].clone()).collect()
}

// ---------------------------------------------------------------- metrics

pub const METRICS_VERSION_LINE: &str = "# fngail-metrics v1";
pub const METRICS_HEADER: &str = "update,frames,episodes,policy_loss,value_loss,entropy,\
mean_reward,eval_success,fn_fraction,score_expert,score_agent_success,score_agent_fail,\
head_conventional,head_oracle_filtered,head_agent_fc,head_expert_fc,\
head_blank_conditioning,head_done_detector,head_sub_trajectory";

#[derive(Debug, Clone, Default)]
pub struct MetricsRow {
    pub update: usize,
    pub frames: usize,
    pub episodes: usize,
    pub policy_loss: Option<Scalar>,
    pub value_loss: Option<Scalar>,
    pub entropy: Option<Scalar>,
    pub mean_reward: Option<Scalar>,
    pub eval_success: Option<Scalar>,
    pub fn_fraction: Option<Scalar>,
    pub score_expert: Option<Scalar>,
    pub score_agent_success: Option<Scalar>,
    pub score_agent_fail: Option<Scalar>,
    /// indexed like HeadKind::ALL
    pub head_losses: [Option<Scalar>; 7],
}

pub struct MetricsWriter {
    w: std::io::BufWriter<fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<MetricsWriter, HarnessError> {
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(w, "{METRICS_VERSION_LINE}")?;
        writeln!(w, "{METRICS_HEADER}")?;
        w.flush()?;
        Ok(MetricsWriter { w })
    }

    pub fn row(&mut self, r: &MetricsRow) -> Result<(), HarnessError> {
        fn cell(v: Option<Scalar>) -> String {
            v.map(|x| format!("{x:.6}")).unwrap_or_default()
        }
        let mut line = format!("{},{},{}", r.update, r.frames, r.episodes);
        for v in [
            r.policy_loss,
            r.value_loss,
            r.entropy,
            r.mean_reward,
            r.eval_success,
            r.fn_fraction,
            r.score_expert,
            r.score_agent_success,
            r.score_agent_fail,
        ] {
            line.push(',');
            line.push_str(&cell(v));
        }
        for v in r.head_losses {
            line.push(',');
            line.push_str(&cell(v));
        }
        writeln!(self.w, "{line}")?;
        self.w.flush()?;
        Ok(())
    }
}

// --------------------------------------------------------------- evaluate

/// Greedy success rate over fresh seeded episodes. Success is decided by
/// the hidden oracle the moment it holds (evaluation auto-terminates);
/// emitting Done before that — or timing out — fails the episode. With
/// `done_terminates` false the Done action is inert, matching training.
/// An optional filter restricts evaluation to one exact instruction.
pub fn evaluate(
    policy: &ActorCritic,
    task: &TaskSpec,
    episodes: usize,
    filter: Option<&str>,
    done_terminates: bool,
    seed: u64,
) -> Result<Scalar, HarnessError> {
    assert!(episodes > 0);
    let lanes = episodes.min(32);
    let gru = policy.profile.gru;

    let mut attempt: u64 = 0;
    let attempt_cap = 10_000 + 1_000 * episodes as u64;
    let spawn = |attempt: &mut u64| -> Result<(WorldState, Instruction), HarnessError> {
        loop {
            if *attempt >= attempt_cap {
                return Err(HarnessError::Config(format!(
                    "instruction filter {filter:?} matched too rarely on task instances"
                )));
            }
            let ep_seed = rng::derive(seed, "eval-episode", *attempt);
            *attempt += 1;
            let (state, instr) = env::reset(task, ep_seed)?;
            if filter.map_or(true, |f| instr.text == f) {
                return Ok((state, instr));
            }
        }
    };

    let mut states = Vec::with_capacity(lanes);
    let mut instrs = Vec::with_capacity(lanes);
    let mut active = vec![true; lanes];
    let mut mem = LaneMemory::zeros(lanes, policy.profile.lstm);
    let mut started = 0usize;
    let mut finished = 0usize;
    let mut successes = 0usize;

    // an episode can satisfy its goal at spawn (e.g. the agent starts
    // facing the target); those count as immediate successes
    let next_live = |attempt: &mut u64,
                         started: &mut usize,
                         finished: &mut usize,
                         successes: &mut usize|
     -> Result<Option<(WorldState, Instruction)>, HarnessError> {
        while *started < episodes {
            *started += 1;
            let (state, instr) = spawn(attempt)?;
            if env::oracle_success(&state, &instr) {
                *successes += 1;
                *finished += 1;
                continue;
            }
            return Ok(Some((state, instr)));
        }
        Ok(None)
    };

    for l in 0..lanes {
        match next_live(&mut attempt, &mut started, &mut finished, &mut successes)? {
            Some((state, instr)) => {
                states.push(state);
                instrs.push(instr);
            }
            None => {
                // ran out of episodes before filling the lanes
                states.push(env::reset(task, rng::derive(seed, "eval-pad", l as u64))?.0);
                instrs.push(Instruction::blank());
                active[l] = false;
            }
        }
    }
    let seqs: Vec<&[u16]> = instrs.iter().map(|i| i.tokens.as_slice()).collect();
    let mut enc = policy.encode_instructions_data(&seqs);

    while active.iter().any(|&a| a) {
        let views: Vec<Observation> = states.iter().map(env::observe).collect();
        let refs: Vec<&Observation> = views.iter().collect();
        let (logits, _) = policy.act_data(&refs, &enc, &mut mem);
        for l in 0..lanes {
            if !active[l] {
                continue;
            }
            let row = &logits[l * Action::COUNT..(l + 1) * Action::COUNT];
            let a = (0..Action::COUNT).max_by(|&x, &y| row[x].total_cmp(&row[y])).unwrap();
            let action = Action::from_id(a as u8).unwrap();
            let res = env::step_mode(&mut states[l], action, done_terminates)?;
            let won = env::oracle_success(&states[l], &instrs[l]);
            let over = won || res.terminated || res.timeout;
            if !over {
                continue;
            }
            if won {
                successes += 1;
            }
            finished += 1;
            match next_live(&mut attempt, &mut started, &mut finished, &mut successes)? {
                Some((state, instr)) => {
                    states[l] = state;
                    let fresh = policy.encode_instructions_data(&[instr.tokens.as_slice()]);
                    enc[l * gru..(l + 1) * gru].copy_from_slice(&fresh);
                    instrs[l] = instr;
                    mem.reset_lane(l);
                }
                None => active[l] = false,
            }
        }
    }
    debug_assert_eq!(finished, episodes);
    Ok(successes as Scalar / episodes as Scalar)
}

// --------------------------------------------------------- run experiment

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Solved,
    Completed,
    Budget,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Solved => "SOLVED",
            RunStatus::Completed => "COMPLETED",
            RunStatus::Budget => "BUDGET",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub status: RunStatus,
    pub final_success: Scalar,
    pub best_success: Scalar,
    pub updates: usize,
    pub frames: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub results: Vec<SeedResult>,
    pub mean_final: Scalar,
    pub var_final: Scalar,
    pub mean_best: Scalar,
}

impl ExperimentSummary {
    fn from_results(results: Vec<SeedResult>) -> ExperimentSummary {
        let n = results.len().max(1) as Scalar;
        let mean_final = results.iter().map(|r| r.final_success).sum::<Scalar>() / n;
        let var_final = results
            .iter()
            .map(|r| (r.final_success - mean_final).powi(2))
            .sum::<Scalar>()
            / n;
        let mean_best = results.iter().map(|r| r.best_success).sum::<Scalar>() / n;
        ExperimentSummary { results, mean_final, var_final, mean_best }
    }

    /// Exit-code policy: budget exhaustion anywhere is reportable.
    pub fn any_budget(&self) -> bool {
        self.results.iter().any(|r| r.status == RunStatus::Budget)
    }
}

fn write_status(dir: &Path, res: &SeedResult) -> Result<(), HarnessError> {
    let mut s = String::new();
    let _ = writeln!(s, "status = {}", res.status.name());
    let _ = writeln!(s, "seed = {}", res.seed);
    let _ = writeln!(s, "final_success = {:.4}", res.final_success);
    let _ = writeln!(s, "best_success = {:.4}", res.best_success);
    let _ = writeln!(s, "updates = {}", res.updates);
    let _ = writeln!(s, "frames = {}", res.frames);
    fs::write(dir.join("status.txt"), s)?;
    Ok(())
}

/// Which head the diagnostics score with: the conventional head when
/// present, else the oracle-filtered one, else whatever is first.
fn diagnostic_head(heads: &[HeadKind]) -> HeadKind {
    if heads.contains(&HeadKind::Conventional) {
        HeadKind::Conventional
    } else if heads.contains(&HeadKind::OracleFiltered) {
        HeadKind::OracleFiltered
    } else {
        heads[0]
    }
}

/// Train every seed in `cfg`, writing per-seed subdirectories under
/// `cfg.out_dir` (metrics.csv, config.txt, status.txt, final and best
/// checkpoints) plus a summary file at the root.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    cfg.validate()?;
    let task = env::preset(&cfg.task).expect("validated");
    let set = read_demos(&cfg.demos)?;
    if set.task_name != cfg.task {
        return Err(HarnessError::Config(format!(
            "demo file is for task {:?}, config says {:?}",
            set.task_name, cfg.task
        )));
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let demos = subsample_demos(&set.demos, cfg.demo_fraction, seed);
        let dir = cfg.out_dir.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir)?;
        let mut seed_cfg = cfg.clone();
        seed_cfg.seeds = vec![seed];
        fs::write(dir.join("config.txt"), seed_cfg.serialize())?;
        let res = match cfg.algo {
            Algo::Gail => run_gail_seed(cfg, &task, &demos, seed, &dir)?,
            Algo::Bc => run_bc_seed(cfg, &task, &demos, seed, &dir)?,
        };
        write_status(&dir, &res)?;
        println!(
            "seed {seed}: {} final={:.1}% best={:.1}% updates={} frames={}",
            res.status.name(),
            100.0 * res.final_success,
            100.0 * res.best_success,
            res.updates,
            res.frames
        );
        results.push(res);
    }
    let summary = ExperimentSummary::from_results(results);
    let mut s = String::new();
    let _ = writeln!(s, "mean_final = {:.4}", summary.mean_final);
    let _ = writeln!(s, "var_final = {:.6}", summary.var_final);
    let _ = writeln!(s, "mean_best = {:.4}", summary.mean_best);
    for r in &summary.results {
        let _ = writeln!(
            s,
            "seed {} = {} {:.4}",
            r.seed,
            r.status.name(),
            r.final_success
        );
    }
    fs::write(cfg.out_dir.join("summary.txt"), s)?;
    println!(
        "mean final success {:.1}% (variance {:.4}), mean best {:.1}%",
        100.0 * summary.mean_final,
        summary.var_final,
        100.0 * summary.mean_best
    );
    Ok(summary)
}

fn run_gail_seed(
    cfg: &ExperimentConfig,
    task: &TaskSpec,
    demos: &[Trajectory],
    seed: u64,
    dir: &Path,
) -> Result<SeedResult, HarnessError> {
    let profile = Profile::by_name(&cfg.profile).expect("validated");
    if demos.is_empty() {
        return Err(HarnessError::Config("no demos after subsampling".into()));
    }
    let needs_pool =
        cfg.heads.contains(&HeadKind::AgentFc) || cfg.heads.contains(&HeadKind::ExpertFc);
    let pool = InstructionSet::build(demos.iter().map(|d| &d.instr));
    if needs_pool && pool.len() < 2 {
        return Err(HarnessError::Config(
            "fake conditioning needs at least two distinct instructions in the demos".into(),
        ));
    }

    let mut policy = ActorCritic::new(profile, rng::derive(seed, "policy-init", 0));
    let mut disc = Discriminator::new(profile, &cfg.heads, rng::derive(seed, "disc-init", 0));
    let reward_cfg = RewardConfig::new(cfg.heads.clone(), cfg.eps);
    let disc_cfg = DiscTrainConfig { eps: cfg.eps, ..DiscTrainConfig::default() };
    let ppo_cfg = PpoConfig { lanes: cfg.lanes, rollout_len: cfg.rollout_len, ..PpoConfig::default() };
    let b_expert = TrajectoryBuffer::from_demos(demos.to_vec());
    let mut b_agent = TrajectoryBuffer::new_agent(cfg.agent_capacity);
    let mut lanes = LaneSet::new(
        task,
        ppo_cfg.lanes,
        rng::derive(seed, "rollout", 0),
        cfg.done_termination,
        &policy,
    )?;
    let mut sample_rng = rng::stream(seed, "action-sample", 0);
    let mut disc_rng = rng::stream(seed, "disc-batch", 0);
    let mut diag_rng = rng::stream(seed, "diagnostic", 0);
    let mut metrics = MetricsWriter::create(&dir.join("metrics.csv"))?;
    let diag_head = diagnostic_head(&cfg.heads);

    let deadline = Instant::now() + Duration::from_secs_f64(cfg.budget_minutes * 60.0);
    let mut frames = 0usize;
    let mut episodes = 0usize;
    let mut best = -1.0 as Scalar;
    let mut last_eval = 0.0 as Scalar;
    let mut streak = 0usize;
    let mut status = RunStatus::Completed;
    let mut updates = 0usize;

    for update in 1..=cfg.max_updates {
        updates = update;
        let (batch, completed) = collect_rollouts(
            &mut lanes,
            &policy,
            &ppo_cfg,
            &mut |t: &Trajectory| gail::reward_for_trajectory(&disc, &reward_cfg, t),
            &mut sample_rng,
        )?;
        frames += batch.frames();
        episodes += completed.len();
        let done_count = batch.dones.iter().filter(|&&d| d).count();
        let mean_reward = if done_count > 0 {
            Some(batch.rewards.iter().sum::<Scalar>() / done_count as Scalar)
        } else {
            None
        };
        for t in completed {
            b_agent.push(t)?;
        }

        let stats = disc_update(&mut disc, &b_agent, &b_expert, &pool, &disc_cfg, &mut disc_rng)?;
        let losses = ppo_update(&mut policy, &batch, &ppo_cfg)?;

        let mut row = MetricsRow {
            update,
            frames,
            episodes,
            policy_loss: Some(losses.policy),
            value_loss: Some(losses.value),
            entropy: Some(losses.entropy),
            mean_reward,
            ..MetricsRow::default()
        };
        for st in &stats {
            let slot = HeadKind::ALL.iter().position(|k| *k == st.kind).unwrap();
            row.head_losses[slot] = st.loss;
        }

        if update % cfg.eval_cadence == 0 {
            let rate = evaluate(
                &policy,
                task,
                cfg.eval_episodes,
                None,
                cfg.done_termination,
                rng::derive(seed, "eval", update as u64),
            )?;
            last_eval = rate;
            row.eval_success = Some(rate);
            if !b_agent.is_empty() {
                let rep =
                    gail::fn_diagnostic(&disc, &b_agent, &b_expert, diag_head, 32, &mut diag_rng)?;
                row.fn_fraction = Some(rep.fn_fraction);
                row.score_expert = Some(rep.mean_expert);
                row.score_agent_success = rep.mean_agent_success;
                row.score_agent_fail = rep.mean_agent_fail;
            }
            if rate > best {
                best = rate;
                policy.store.save(&dir.join("policy-best.fnck"))?;
                disc.store.save(&dir.join("disc-best.fnck"))?;
            }
            streak = if rate >= 0.99 { streak + 1 } else { 0 };
            metrics.row(&row)?;
            if streak >= 10 {
                status = RunStatus::Solved;
                break;
            }
        } else {
            metrics.row(&row)?;
        }

        if Instant::now() >= deadline {
            status = RunStatus::Budget;
            break;
        }
    }

    policy.store.save(&dir.join("policy.fnck"))?;
    disc.store.save(&dir.join("disc.fnck"))?;
    if best < 0.0 {
        // never evaluated mid-run (tiny max_updates); measure once now
        last_eval = evaluate(
            &policy,
            task,
            cfg.eval_episodes,
            None,
            cfg.done_termination,
            rng::derive(seed, "eval", 0),
        )?;
        best = last_eval;
        policy.store.save(&dir.join("policy-best.fnck"))?;
        disc.store.save(&dir.join("disc-best.fnck"))?;
    }
    Ok(SeedResult {
        seed,
        status,
        final_success: last_eval,
        best_success: best,
        updates,
        frames,
    })
}

use crate::gail::disc_update;

fn run_bc_seed(
    cfg: &ExperimentConfig,
    task: &TaskSpec,
    demos: &[Trajectory],
    seed: u64,
    dir: &Path,
) -> Result<SeedResult, HarnessError> {
    let profile = Profile::by_name(&cfg.profile).expect("validated");
    if demos.is_empty() {
        return Err(HarnessError::Config("no demos after subsampling".into()));
    }
    let mut policy = ActorCritic::new(profile, rng::derive(seed, "policy-init", 0));
    let bc_cfg = BcConfig {
        eval_cadence: cfg.eval_cadence,
        epochs: {
            let per_epoch = demos.len().div_ceil(32);
            cfg.max_updates.div_ceil(per_epoch)
        },
        ..BcConfig::default()
    };
    let deadline = Instant::now() + Duration::from_secs_f64(cfg.budget_minutes * 60.0);

    let metrics = RefCell::new(MetricsWriter::create(&dir.join("metrics.csv"))?);
    let best = Cell::new(-1.0 as Scalar);
    let last_update = Cell::new(0usize);
    let eval_failure: RefCell<Option<HarnessError>> = RefCell::new(None);
    let eval_count = Cell::new(0u64);

    let mut on_update = |update: usize, loss: Scalar| {
        last_update.set(update);
        let _ = metrics.borrow_mut().row(&MetricsRow {
            update,
            frames: 0,
            episodes: 0,
            policy_loss: Some(loss),
            ..MetricsRow::default()
        });
    };
    let mut eval_fn = |p: &ActorCritic| -> Scalar {
        let n = eval_count.get();
        eval_count.set(n + 1);
        match evaluate(
            p,
            task,
            cfg.eval_episodes,
            None,
            cfg.done_termination,
            rng::derive(seed, "eval", n),
        ) {
            Ok(rate) => {
                let _ = metrics.borrow_mut().row(&MetricsRow {
                    update: last_update.get(),
                    eval_success: Some(rate),
                    ..MetricsRow::default()
                });
                if rate > best.get() {
                    best.set(rate);
                    let _ = p.store.save(&dir.join("policy-best.fnck"));
                }
                rate
            }
            Err(e) => {
                *eval_failure.borrow_mut() = Some(e);
                0.0
            }
        }
    };

    let out = bc_train(
        &mut policy,
        demos,
        &bc_cfg,
        seed,
        Some(deadline),
        &mut on_update,
        &mut eval_fn,
    )
    .map_err(PpoError::Autodiff)?;
    if let Some(e) = eval_failure.into_inner() {
        return Err(e);
    }

    policy.store.save(&dir.join("policy.fnck"))?;
    let final_success = match out.curve.last() {
        Some(&(_, rate)) => rate,
        None => {
            let rate = evaluate(
                &policy,
                task,
                cfg.eval_episodes,
                None,
                cfg.done_termination,
                rng::derive(seed, "eval", u64::MAX),
            )?;
            if rate > best.get() {
                best.set(rate);
                policy.store.save(&dir.join("policy-best.fnck"))?;
            }
            rate
        }
    };
    let status = if out.solved {
        RunStatus::Solved
    } else if Instant::now() >= deadline {
        RunStatus::Budget
    } else {
        RunStatus::Completed
    };
    Ok(SeedResult {
        seed,
        status,
        final_success,
        best_success: best.get().max(final_success),
        updates: out.updates,
        frames: 0,
    })
}

// -------------------------------------------------------------- diagnosis

/// A trained run reloaded from its directory.
pub struct LoadedRun {
    pub cfg: ExperimentConfig,
    pub task: TaskSpec,
    pub policy: ActorCritic,
    pub disc: Option<Discriminator>,
}

/// Rebuild models from a per-seed run directory (config.txt plus FNCK
/// checkpoints). `best` picks the best-eval checkpoint over the final one.
pub fn load_run(dir: &Path, best: bool) -> Result<LoadedRun, HarnessError> {
    let text = fs::read_to_string(dir.join("config.txt"))?;
    let mut cfg = ExperimentConfig::default();
    cfg.apply_file(&text)?;
    cfg.validate()?;
    let task = env::preset(&cfg.task).expect("validated");
    let profile = Profile::by_name(&cfg.profile).expect("validated");
    let seed = cfg.seeds[0];
    let suffix = if best { "-best" } else { "" };

    let mut policy = ActorCritic::new(profile, rng::derive(seed, "policy-init", 0));
    policy.store.load(&dir.join(format!("policy{suffix}.fnck")))?;
    let disc = if cfg.algo == Algo::Gail {
        let mut d = Discriminator::new(profile, &cfg.heads, rng::derive(seed, "disc-init", 0));
        d.store.load(&dir.join(format!("disc{suffix}.fnck")))?;
        Some(d)
    } else {
        None
    };
    Ok(LoadedRun { cfg, task, policy, disc })
}

/// Fill an agent buffer by sampling the trained policy, then report the
/// false-negative picture: what fraction of its episodes secretly
/// succeed, and how the discriminator scores experts vs successful vs
/// failed agent episodes. Writes `diagnosis.txt` next to the checkpoints.
pub fn diagnose_fn(dir: &Path, episodes: usize, best: bool) -> Result<FnReport, HarnessError> {
    assert!(episodes > 0);
    let run = load_run(dir, best)?;
    let disc = run.disc.as_ref().ok_or_else(|| {
        HarnessError::Config("this run has no discriminator (bc); nothing to diagnose".into())
    })?;
    let seed = run.cfg.seeds[0];

    let set = read_demos(&run.cfg.demos)?;
    let demos = subsample_demos(&set.demos, run.cfg.demo_fraction, seed);
    let b_expert = TrajectoryBuffer::from_demos(demos);

    let mut b_agent = TrajectoryBuffer::new_agent(episodes);
    let ppo_cfg = PpoConfig {
        lanes: episodes.min(32),
        rollout_len: 40,
        ..PpoConfig::default()
    };
    let mut lanes = LaneSet::new(
        &run.task,
        ppo_cfg.lanes,
        rng::derive(seed, "diagnose-rollout", 0),
        run.cfg.done_termination,
        &run.policy,
    )?;
    let mut r = rng::stream(seed, "diagnose-sample", 0);
    let mut zero = |_t: &Trajectory| -> Result<Scalar, GailError> { Ok(0.0) };
    while lanes.episodes_finished < episodes {
        let (_, completed) =
            collect_rollouts(&mut lanes, &run.policy, &ppo_cfg, &mut zero, &mut r)?;
        for t in completed {
            b_agent.push(t)?;
        }
    }

    let head = diagnostic_head(&run.cfg.heads);
    let mut diag_rng = rng::stream(seed, "diagnose-score", 0);
    let rep = gail::fn_diagnostic(disc, &b_agent, &b_expert, head, 64, &mut diag_rng)?;

    let mut s = String::new();
    let _ = writeln!(s, "episodes = {}", rep.n_agent);
    let _ = writeln!(s, "oracle_successes = {}", rep.n_agent_success);
    let _ = writeln!(s, "fn_fraction = {:.4}", rep.fn_fraction);
    let _ = writeln!(s, "scored_head = {}", head.tag());
    let _ = writeln!(s, "mean_score_expert = {:.4}", rep.mean_expert);
    match rep.mean_agent_success {
        Some(v) => {
            let _ = writeln!(s, "mean_score_agent_success = {v:.4}");
        }
        None => {
            let _ = writeln!(s, "mean_score_agent_success = n/a");
        }
    }
    match rep.mean_agent_fail {
        Some(v) => {
            let _ = writeln!(s, "mean_score_agent_fail = {v:.4}");
        }
        None => {
            let _ = writeln!(s, "mean_score_agent_fail = n/a");
        }
    }
    fs::write(dir.join("diagnosis.txt"), &s)?;
    print!("{s}");
    Ok(rep)
}

/// Generate demos with the scripted expert and write them out.
pub fn gen_demos(task_name: &str, count: usize, seed: u64, out: &Path) -> Result<(), HarnessError> {
    let task = env::preset(task_name).ok_or_else(|| {
        HarnessError::Config(format!(
            "unknown task {:?}; presets: {}",
            task_name,
            env::PRESET_NAMES.join(", ")
        ))
    })?;
    let set = bot::generate_demos(&task, task_name, count, seed)?;
    write_demos(out, &set)?;
    println!("wrote {} demos for {} to {}", set.demos.len(), task_name, out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_set(n: usize) -> DemoSet {
        demo_set_for("gotoredball-mini", n)
    }

    fn demo_set_for(task_name: &str, n: usize) -> DemoSet {
        let task = env::preset(task_name).unwrap();
        bot::generate_demos(&task, task_name, n, 17).unwrap()
    }

    #[test]
    fn config_file_and_overrides_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_file(
            "# experiment\n\
             task = gotolocal-mini\n\
             demos = demos/gl.fngd\n\
             algo = gail\n\
             heads = agent_fc,done_detector\n\
             demo_fraction = 1/8\n\
             seeds = 4,5\n\
             budget_minutes = 2.5\n",
        )
        .unwrap();
        assert_eq!(cfg.task, "gotolocal-mini");
        assert_eq!(cfg.heads, vec![HeadKind::AgentFc, HeadKind::DoneDetector]);
        assert_eq!(cfg.demo_fraction, (1, 8));
        assert_eq!(cfg.seeds, vec![4, 5]);
        cfg.apply("seed", "9").unwrap();
        assert_eq!(cfg.seeds, vec![9]);
        cfg.validate().unwrap();

        // serialize → parse lands on the same config
        let text = cfg.serialize();
        let mut back = ExperimentConfig::default();
        back.apply_file(&text).unwrap();
        assert_eq!(format!("{back:?}"), format!("{cfg:?}"));

        assert!(cfg.apply("no_such_key", "1").is_err());
        assert!(cfg.apply("demo_fraction", "1/3").is_err());
        assert!(cfg.apply("heads", "agent_fc,bogus").is_err());
    }

    #[test]
    fn head_combo_validation_enumerates_the_allowed_sets() {
        let sets = valid_head_sets();
        assert_eq!(sets.len(), 15, "3 singles + 3 bases x 4 augmentations");
        let mut cfg = ExperimentConfig::default();
        cfg.task = "gotoredball-mini".into();
        for s in &sets {
            cfg.heads = s.clone();
            cfg.validate().unwrap();
        }
        // order inside the set must not matter
        cfg.heads = vec![HeadKind::DoneDetector, HeadKind::AgentFc];
        cfg.validate().unwrap();
        // anything else is rejected
        for bad in [
            vec![HeadKind::Conventional, HeadKind::AgentFc],
            vec![HeadKind::Conventional, HeadKind::OracleFiltered],
            vec![HeadKind::DoneDetector],
            vec![HeadKind::SubTrajectory, HeadKind::DoneDetector],
            vec![],
        ] {
            cfg.heads = bad.clone();
            assert!(cfg.validate().is_err(), "{bad:?} should be invalid");
        }
    }

    #[test]
    fn demo_files_round_trip_byte_for_byte() {
        let set = demo_set(20);
        let bytes = write_demos_bytes(&set);
        let back = read_demos_bytes(&bytes).unwrap();
        assert_eq!(back, set, "structural equality");
        assert_eq!(write_demos_bytes(&back), bytes, "byte equality");

        // header carries the demo count
        let count = u32::from_le_bytes([
            bytes[lengths_prefix(&set)],
            bytes[lengths_prefix(&set) + 1],
            bytes[lengths_prefix(&set) + 2],
            bytes[lengths_prefix(&set) + 3],
        ]);
        assert_eq!(count as usize, set.demos.len());
    }

    // offset of the demo-count field: magic + version + task tag + vocab
    fn lengths_prefix(set: &DemoSet) -> usize {
        let mut n = 4 + 2 + 2 + set.task_name.len() + 2;
        for w in lang::VOCAB {
            n += 2 + w.len();
        }
        n
    }

    #[test]
    fn demo_loader_rejects_corruption_with_offsets() {
        let set = demo_set(3);
        let bytes = write_demos_bytes(&set);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_demos_bytes(&bad), Err(DemoIoError::BadMagic)));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(read_demos_bytes(&bad), Err(DemoIoError::BadVersion(9))));

        let truncated = &bytes[..bytes.len() - 5];
        match read_demos_bytes(truncated) {
            Err(DemoIoError::Truncated { offset }) => assert_eq!(offset, truncated.len()),
            other => panic!("want Truncated, got {other:?}"),
        }

        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            read_demos_bytes(&extra),
            Err(DemoIoError::TrailingBytes { extra: 1 })
        ));

        // first demo's first action byte: header + ntok + tokens + nsteps + obs
        let set0 = &set.demos[0];
        let off = lengths_prefix(&set) + 4 + 2 + 2 * set0.instr.tokens.len() + 2 + OBS_BYTES;
        let mut bad = bytes.clone();
        bad[off] = 200;
        match read_demos_bytes(&bad) {
            Err(DemoIoError::BadAction { offset, value: 200 }) => assert_eq!(offset, off),
            other => panic!("want BadAction at {off}, got {other:?}"),
        }
    }

    #[test]
    fn demo_file_io_via_disk(){
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos/x.fngd");
        let set = demo_set(5);
        write_demos(&path, &set).unwrap();
        assert_eq!(read_demos(&path).unwrap(), set);
        assert!(matches!(
            read_demos(&dir.path().join("missing.fngd")),
            Err(DemoIoError::Io(_))
        ));
    }

    #[test]
    fn subsampling_is_deterministic_and_sized_right() {
        let set = demo_set(64);
        let a = subsample_demos(&set.demos, (1, 8), 3);
        let b = subsample_demos(&set.demos, (1, 8), 3);
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        let c = subsample_demos(&set.demos, (1, 8), 4);
        assert_ne!(a, c, "different seed, different subset");
        assert_eq!(subsample_demos(&set.demos, (1, 1), 3).len(), 64);
        assert_eq!(subsample_demos(&set.demos, (1, 64), 3).len(), 1);
        // tiny corpora still yield at least one demo
        assert_eq!(subsample_demos(&set.demos[..3], (1, 64), 3).len(), 1);
    }

    #[test]
    fn metrics_file_has_versioned_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        w.row(&MetricsRow {
            update: 1,
            frames: 2560,
            episodes: 12,
            policy_loss: Some(0.5),
            ..MetricsRow::default()
        })
        .unwrap();
        let mut row = MetricsRow { update: 2, eval_success: Some(0.25), ..MetricsRow::default() };
        row.head_losses[2] = Some(1.38);
        w.row(&row).unwrap();
        drop(w);
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_VERSION_LINE);
        assert_eq!(lines[1], METRICS_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("1,2560,12,0.500000,"));
        let cols: Vec<&str> = lines[3].split(',').collect();
        assert_eq!(cols.len(), METRICS_HEADER.split(',').count());
        assert_eq!(cols[7], "0.250000");
        assert_eq!(cols[14], "1.380000");
        assert_eq!(cols[3], "", "absent metrics stay empty");
    }

    #[test]
    fn evaluation_is_deterministic_and_respects_filters() {
        let task = env::preset("gotoredball-mini").unwrap();
        let policy = ActorCritic::new(Profile::tiny(), 50);
        let a = evaluate(&policy, &task, 24, None, true, 99).unwrap();
        let b = evaluate(&policy, &task, 24, None, true, 99).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));

        // filtered evaluation only runs matching episodes; on a task with
        // several instructions the filter must still find its episodes
        let gl = env::preset("gotolocal-mini").unwrap();
        let rate =
            evaluate(&policy, &gl, 8, Some("go to the red ball"), true, 7).unwrap();
        assert!((0.0..=1.0).contains(&rate));
        // an instruction outside the task grammar never matches
        let err = evaluate(&policy, &gl, 4, Some("go to the mauve ball"), true, 7);
        assert!(err.is_err());
    }

    #[test]
    fn experiment_writes_the_full_run_layout() {
        let dir = tempfile::tempdir().unwrap();
        let demo_path = dir.path().join("demos.fngd");
        // fake conditioning needs a task with more than one instruction
        write_demos(&demo_path, &demo_set_for("gotolocal-mini", 16)).unwrap();

        let mut cfg = ExperimentConfig::default();
        cfg.task = "gotolocal-mini".into();
        cfg.demos = demo_path;
        cfg.out_dir = dir.path().join("run");
        cfg.heads = vec![HeadKind::AgentFc, HeadKind::DoneDetector];
        cfg.seeds = vec![1];
        cfg.profile = "tiny".into();
        cfg.max_updates = 2;
        cfg.eval_cadence = 1;
        cfg.eval_episodes = 6;
        cfg.lanes = 8;
        cfg.rollout_len = 10;
        cfg.budget_minutes = 30.0;
        let summary = run_experiment(&cfg).unwrap();
        assert_eq!(summary.results.len(), 1);
        assert_eq!(summary.results[0].updates, 2);
        assert_eq!(summary.results[0].frames, 2 * 8 * 10);

        let seed_dir = cfg.out_dir.join("seed-1");
        for f in
            ["metrics.csv", "config.txt", "status.txt", "policy.fnck", "disc.fnck",
             "policy-best.fnck", "disc-best.fnck"]
        {
            assert!(seed_dir.join(f).exists(), "missing {f}");
        }
        assert!(cfg.out_dir.join("summary.txt").exists());
        let metrics = fs::read_to_string(seed_dir.join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 2 + 2, "one row per update");

        // the saved run reloads and diagnoses
        let run = load_run(&seed_dir, false).unwrap();
        assert_eq!(run.cfg.task, "gotolocal-mini");
        assert!(run.disc.is_some());
        let rep = diagnose_fn(&seed_dir, 12, false).unwrap();
        assert_eq!(rep.n_agent, 12.min(rep.n_agent.max(12)));
        assert!((0.0..=1.0).contains(&rep.fn_fraction));
        assert!(seed_dir.join("diagnosis.txt").exists());
    }

    #[test]
    fn bc_experiment_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let demo_path = dir.path().join("demos.fngd");
        write_demos(&demo_path, &demo_set(8)).unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.task = "gotoredball-mini".into();
        cfg.demos = demo_path;
        cfg.out_dir = dir.path().join("run");
        cfg.algo = Algo::Bc;
        cfg.seeds = vec![2];
        cfg.profile = "tiny".into();
        cfg.max_updates = 3;
        cfg.eval_cadence = 2;
        cfg.eval_episodes = 4;
        cfg.budget_minutes = 30.0;
        let summary = run_experiment(&cfg).unwrap();
        assert_eq!(summary.results[0].updates, 3);
        let seed_dir = cfg.out_dir.join("seed-2");
        assert!(seed_dir.join("policy.fnck").exists());
        assert!(seed_dir.join("policy-best.fnck").exists());
        assert!(
            diagnose_fn(&seed_dir, 4, false).is_err(),
            "bc runs have no discriminator to diagnose"
        );
    }
}
