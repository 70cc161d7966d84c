//! The eight gates this lab has to clear before its results are worth
//! quoting, one test per gate, each printing a single
//! `ACCEPTANCE <n> PASS|FAIL` line. The heavy gates train real agents, so
//! the suite caches finished runs under `target/acceptance/` and reuses
//! them on later invocations; delete that directory to retrain from
//! scratch. Run with:
//!
//! ```text
//! cargo test --release --test acceptance -- --test-threads 1 --nocapture
//! ```

use fngail::bot;
use fngail::env::{self, Action, EndCause};
use fngail::gail::{
    self, head_loss, make_prefixes, terminal_reward, HeadKind, Source, Trajectory,
    TrajectoryBuffer,
};
use fngail::harness::{
    bc_demo_budget, evaluate, load_run, read_demos, run_experiment, subsample_demos, Algo,
    ExperimentConfig,
};
use fngail::lang::{Instruction, InstructionSet};
use fngail::models::{Discriminator, Profile, SeqRef};
use fngail::ppo::{compute_advantages, RolloutBatch};
use fngail::rng;
use fngail::Scalar;
use rand::Rng as _;
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

// ------------------------------------------------------------ tuning knobs

/// Model size every trained gate uses. Calibrated so each run finishes
/// far inside its wall-clock cap on a single laptop-class core.
const PROFILE: &str = "tiny";
/// Eval protocol shared by all gates.
const EVAL_EPISODES: usize = 500;
const EVAL_CADENCE: usize = 100;
/// Per-run update caps (the budget clock is the backstop, these are the
/// deterministic stop).
const BC_MAX_UPDATES: usize = 12_000;
const GAIL_MAX_UPDATES: usize = 1_500;
/// Wall-clock caps the gates assert against.
const BC_CAP: Duration = Duration::from_secs(20 * 60);
const GAIL_CAP: Duration = Duration::from_secs(60 * 60);
/// Seeds for every multi-seed comparison.
const SEEDS: [u64; 3] = [1, 2, 3];

// --------------------------------------------------------------- plumbing

fn root() -> PathBuf {
    // target/ lives two levels above this crate's manifest
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    p.join("../../target/acceptance").canonicalize().unwrap_or_else(|_| {
        let q = p.join("../../target/acceptance");
        fs::create_dir_all(&q).unwrap();
        q.canonicalize().unwrap()
    })
}

/// Cached demo corpus (one fixed generation seed per task).
fn ensure_demos(task: &str, count: usize) -> PathBuf {
    let dir = root().join("demos");
    fs::create_dir_all(&dir).unwrap();
    let path = dir.join(format!("{task}-{count}.fngd"));
    if !path.exists() {
        fngail::harness::gen_demos(task, count, 77, &path).unwrap();
    }
    path
}

#[derive(Debug, Clone)]
struct SeedOutcome {
    final_success: Scalar,
    #[allow(dead_code)]
    best_success: Scalar,
    status: String,
}

#[derive(Debug, Clone)]
struct RunOutcome {
    dir: PathBuf,
    seeds: Vec<(u64, SeedOutcome)>,
    elapsed: Duration,
}

impl RunOutcome {
    fn mean_final(&self) -> Scalar {
        let s: Scalar = self.seeds.iter().map(|(_, o)| o.final_success).sum();
        s / self.seeds.len() as Scalar
    }

    fn seed_dir(&self, seed: u64) -> PathBuf {
        self.dir.join(format!("seed-{seed}"))
    }
}

fn parse_status(path: &Path) -> SeedOutcome {
    let text = fs::read_to_string(path).unwrap();
    let mut kv = HashMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    SeedOutcome {
        final_success: kv["final_success"].parse().unwrap(),
        best_success: kv["best_success"].parse().unwrap(),
        status: kv["status"].clone(),
    }
}

static TRAIN_LOCK: Mutex<()> = Mutex::new(());

/// Train a named experiment once and cache it; later calls (and later
/// `cargo test` invocations) reuse the finished directory.
fn ensure_run(name: &str, mut cfg: ExperimentConfig) -> RunOutcome {
    let _guard = TRAIN_LOCK.lock().unwrap();
    let dir = root().join("runs").join(name);
    cfg.out_dir = dir.clone();
    let marker = dir.join("elapsed-secs.txt");
    if !marker.exists() {
        let _ = fs::remove_dir_all(&dir); // drop any half-finished attempt
        eprintln!("[acceptance] training {name} ({} seeds)...", cfg.seeds.len());
        let start = Instant::now();
        run_experiment(&cfg).unwrap();
        fs::write(&marker, format!("{}", start.elapsed().as_secs_f64())).unwrap();
    }
    let elapsed =
        Duration::from_secs_f64(fs::read_to_string(&marker).unwrap().trim().parse().unwrap());
    let seeds = cfg
        .seeds
        .iter()
        .map(|&s| (s, parse_status(&dir.join(format!("seed-{s}/status.txt")))))
        .collect();
    RunOutcome { dir, seeds, elapsed }
}

fn gail_config(task: &str, demo_count: usize, fraction: (u32, u32), heads: &[HeadKind]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.task = task.into();
    cfg.demos = ensure_demos(task, demo_count);
    cfg.demo_fraction = fraction;
    cfg.algo = Algo::Gail;
    cfg.heads = heads.to_vec();
    cfg.seeds = SEEDS.to_vec();
    cfg.profile = PROFILE.into();
    cfg.max_updates = GAIL_MAX_UPDATES;
    cfg.budget_minutes = GAIL_CAP.as_secs_f64() / 60.0;
    cfg.eval_cadence = EVAL_CADENCE;
    cfg.eval_episodes = EVAL_EPISODES;
    cfg
}

fn report(n: usize, pass: bool, detail: &str) {
    // one grep-friendly verdict line per gate
    println!("ACCEPTANCE {n} {}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "gate {n} failed: {detail}");
}

fn pct(x: Scalar) -> String {
    format!("{:.1}%", 100.0 * x)
}

// ------------------------------------------------------ gate 1: invariants

#[test]
fn a1_invariant_sweep_is_fast_and_green() {
    let t0 = Instant::now();

    // FIFO agent buffer: capacity 2, three pushes keep the newest two
    let mk = |text: &str, n: usize, ok: bool| Trajectory {
        instr: Instruction::from_text(text, None).unwrap(),
        steps: vec![(env::Observation::zeros(), Action::Forward); n],
        end: EndCause::Timeout,
        oracle_success: ok,
        source: Source::Agent,
    };
    let mut buf = TrajectoryBuffer::new_agent(2);
    buf.push(mk("go to the red ball", 1, false)).unwrap();
    buf.push(mk("go to the blue key", 2, false)).unwrap();
    buf.push(mk("go to the green box", 3, true)).unwrap();
    assert_eq!(buf.len(), 2);
    assert_eq!(buf.get(0).len(), 2, "oldest evicted first");
    assert_eq!(buf.get(1).len(), 3);

    // fake sampling: 10^4 draws never return the original, and the draw
    // is uniform over the rest of the pool (chi-square, p > 0.01)
    let texts = [
        "go to the red ball",
        "go to the green ball",
        "go to the blue ball",
        "go to the red key",
        "go to the green key",
        "go to the blue key",
        "go to the red box",
        "go to the green box",
    ];
    let instrs: Vec<Instruction> =
        texts.iter().map(|t| Instruction::from_text(t, None).unwrap()).collect();
    let pool = InstructionSet::build(instrs.iter());
    let orig = &instrs[0];
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut r = rng::stream(1, "acceptance-fake", 0);
    for _ in 0..10_000 {
        let fake = pool.sample_fake(orig, &mut r).unwrap();
        assert_ne!(fake.text, orig.text, "fake conditioning must change the instruction");
        *counts.entry(fake.text).or_default() += 1;
    }
    let k = (texts.len() - 1) as f64;
    let expected = 10_000.0 / k;
    let stat: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert_eq!(counts.len() as f64, k, "every other instruction should appear");
    let chi = statrs::distribution::ChiSquared::new(k - 1.0).unwrap();
    let p = 1.0 - statrs::distribution::ContinuousCDF::cdf(&chi, stat);
    assert!(p > 0.01, "fake sampling not uniform: chi2={stat:.2}, p={p:.4}");

    // prefix materialization: count is the sum of (T - 1)
    let demo = |text: &str, n: usize| {
        let mut t = mk(text, n, true);
        t.end = EndCause::Done;
        t.source = Source::Expert;
        t
    };
    let lens = [1usize, 7, 4, 2];
    let demos: Vec<Trajectory> =
        lens.iter().map(|&n| demo("go to the red ball", n)).collect();
    let expert = TrajectoryBuffer::from_demos(demos);
    let want: usize = lens.iter().map(|&n| n - 1).sum();
    assert_eq!(make_prefixes(&expert).len(), want);

    // oracle filter equals a brute-force recount
    let mut agent = TrajectoryBuffer::new_agent(64);
    let mut want_failed = Vec::new();
    let mut r = rng::stream(2, "acceptance-of", 0);
    for i in 0..50 {
        let ok = r.gen_bool(0.4);
        agent.push(mk("go to the red ball", 1 + i % 6, ok)).unwrap();
        if !ok {
            want_failed.push(i);
        }
    }
    assert_eq!(agent.oracle_filter(), want_failed);

    // pinned loss and reward values
    let eps: Scalar = 1e-3;
    let l = head_loss(&[0.5; 16], &[0.5; 16], eps).unwrap();
    assert!((l - 2.0 * (2.0 as Scalar).ln()).abs() < 1e-6, "uniform loss {l}");
    let cap = terminal_reward(&[1.0], eps);
    assert!((cap - -(eps).ln()).abs() < 1e-6, "reward cap {cap}");
    for d in [0.07 as Scalar, 0.5, 0.881] {
        let one = terminal_reward(&[d], eps);
        let many = terminal_reward(&[d; 5], eps);
        assert!((one - many).abs() < 1e-6, "equal-weight mixing identity");
    }

    // the done detector never looks at agent data: with the batch RNG
    // fixed, its loss is identical whether the agent buffer is empty or full
    let task = env::preset("gotoredball-mini").unwrap();
    let demos = bot::generate_demos(&task, "gotoredball-mini", 10, 3).unwrap();
    let expert = TrajectoryBuffer::from_demos(demos.demos);
    let pool = InstructionSet::build(expert.iter().map(|t| &t.instr));
    let disc = Discriminator::new(Profile::tiny(), &[HeadKind::DoneDetector], 9);
    let dd_loss = |agent: &TrajectoryBuffer| -> Scalar {
        let mut r = rng::stream(4, "acceptance-dd", 0);
        let (pos, neg) =
            gail::assemble_batch(HeadKind::DoneDetector, agent, &expert, &pool, &mut r, 16)
                .unwrap()
                .unwrap();
        let score = |items: &[gail::SampledItem]| -> Vec<Scalar> {
            let refs: Vec<SeqRef> = items
                .iter()
                .map(|it| {
                    let t = match it.source {
                        Source::Agent => agent.get(it.index),
                        Source::Expert => expert.get(it.index),
                    };
                    SeqRef { steps: &t.steps[..it.len], cond: &it.cond.tokens }
                })
                .collect();
            disc.score_data(&refs).into_iter().map(|row| row[0]).collect()
        };
        head_loss(&score(&pos), &score(&neg), eps).unwrap()
    };
    let quiet = dd_loss(&TrajectoryBuffer::new_agent(8));
    let mut busy = TrajectoryBuffer::new_agent(8);
    for i in 0..8 {
        busy.push(mk("go to the blue key", 2 + i, i % 2 == 0)).unwrap();
    }
    assert_eq!(quiet, dd_loss(&busy), "agent data leaked into the done detector");

    // gradient check across every layer kind the models use, via a full
    // discriminator score: conv, channel norm + film, embedding, GRU,
    // linear, LSTM, head MLP
    gradcheck_discriminator();

    // advantage estimation equals a brute-force discounted fold
    gae_matches_brute_force();

    // demo files round-trip byte for byte
    let set = bot::generate_demos(&task, "gotoredball-mini", 8, 5).unwrap();
    let bytes = fngail::harness::write_demos_bytes(&set);
    let back = fngail::harness::read_demos_bytes(&bytes).unwrap();
    assert_eq!(back, set);
    assert_eq!(fngail::harness::write_demos_bytes(&back), bytes);

    // environment determinism: same seed, same episode, step for step
    let (mut s1, i1) = env::reset(&task, 1234).unwrap();
    let (mut s2, i2) = env::reset(&task, 1234).unwrap();
    assert_eq!(i1, i2);
    assert_eq!(s1, s2);
    let script = [Action::Left, Action::Forward, Action::Forward, Action::Right,
        Action::Forward, Action::Pickup, Action::Drop, Action::Forward];
    for a in script {
        let r1 = env::step(&mut s1, a).unwrap();
        let r2 = env::step(&mut s2, a).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(s1, s2);
    }
    let (s3, _) = env::reset(&task, 1235).unwrap();
    assert_ne!(s1.initial_objects, s3.initial_objects, "different seeds, different rooms");

    let elapsed = t0.elapsed();
    report(
        1,
        elapsed < Duration::from_secs(300),
        &format!("invariant sweep green in {:.1}s (cap 300s)", elapsed.as_secs_f64()),
    );
}

fn gradcheck_discriminator() {
    let task = env::preset("gotoredball-mini").unwrap();
    let (mut state, instr) = env::reset(&task, 42).unwrap();
    let mut steps = Vec::new();
    for a in [Action::Forward, Action::Left, Action::Forward, Action::Done] {
        let obs = env::observe(&state);
        env::step(&mut state, a).unwrap();
        steps.push((obs, a));
    }
    let mut disc = Discriminator::new(Profile::tiny(), &[HeadKind::Conventional], 11);
    // zero-init layers have zero gradients by construction; nudge them
    // (and everything else) to a generic point first
    let ids: Vec<_> = disc.store.ids().collect();
    let mut r = rng::stream(12, "acceptance-gc", 0);
    for pid in &ids {
        for i in 0..disc.store.data(*pid).len() {
            let v = disc.store.data(*pid)[i];
            let nudged = v + r.gen_range(-0.15..0.15) as Scalar;
            disc.store.set_component(*pid, i, nudged);
        }
    }
    let mut tape = fngail::autodiff::Tape::new();
    let bound = disc.bind(&mut tape);
    let items = [SeqRef { steps: &steps, cond: &instr.tokens }];
    let run = bound.run(&mut tape, &items);
    let s = bound.head_scores(&mut tape, HeadKind::Conventional, &run, &[(0, steps.len() - 1)]);
    let loss = tape.mean(s);
    tape.backward(loss).unwrap();
    disc.store.zero_grads();
    disc.store.absorb(&tape);
    let grads: HashMap<String, Vec<Scalar>> = ids
        .iter()
        .map(|&pid| (disc.store.name(pid).to_string(), disc.store.grad(pid).to_vec()))
        .collect();

    let layer_spanning = [
        "conv1.w", "conv2.b", "film1.w", "film2.b", "instr.emb.table", "instr.gru.wi",
        "instr.gru.wh", "pre.w", "mem.wi", "mem.wh", "head.conventional.l1.w",
        "head.conventional.l3.b",
    ];
    let h: Scalar = 1e-3;
    for name in layer_spanning {
        let pid = disc.store.find(name).unwrap_or_else(|| panic!("no param {name}"));
        let n = disc.store.data(pid).len();
        let stride = (n / 8).max(1);
        for i in (0..n).step_by(stride) {
            let orig = disc.store.data(pid)[i];
            disc.store.set_component(pid, i, orig + h);
            let fp = score_once(&disc, &steps, &instr);
            disc.store.set_component(pid, i, orig - h);
            let fm = score_once(&disc, &steps, &instr);
            disc.store.set_component(pid, i, orig);
            let fd = (fp - fm) / (2.0 * h);
            let ad = grads[name][i];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
            assert!(rel < 1e-3, "{name}[{i}]: tape {ad} vs numeric {fd} (rel {rel})");
        }
    }
}

fn score_once(disc: &Discriminator, steps: &[(env::Observation, Action)], instr: &Instruction) -> Scalar {
    disc.score_data(&[SeqRef { steps, cond: &instr.tokens }])[0][0]
}

fn gae_matches_brute_force() {
    let lanes = 3;
    let steps = 8;
    let mut r = rng::stream(5, "acceptance-gae", 0);
    let n = lanes * steps;
    let batch = RolloutBatch {
        lanes,
        steps,
        obs: vec![env::Observation::zeros(); n],
        actions: vec![0; n],
        logps: vec![0.0; n],
        values: (0..n).map(|_| r.gen_range(-1.0..1.0) as Scalar).collect(),
        rewards: (0..n).map(|_| r.gen_range(0.0..2.0) as Scalar).collect(),
        dones: (0..n).map(|_| r.gen_bool(0.2)).collect(),
        instr_idx: vec![0; n],
        instrs: vec![Instruction::blank()],
        start_h: vec![0.0; lanes],
        start_c: vec![0.0; lanes],
        last_values: (0..lanes).map(|_| r.gen_range(-1.0..1.0) as Scalar).collect(),
    };
    let (gamma, lam) = (0.95 as Scalar, 0.8 as Scalar);
    let (adv, ret) = compute_advantages(&batch, gamma, lam);
    for l in 0..lanes {
        for t0 in 0..steps {
            // brute force: sum of discounted TD residuals until a done
            let mut want = 0.0 as Scalar;
            let mut coef = 1.0 as Scalar;
            for t in t0..steps {
                let idx = t * lanes + l;
                let next_v = if batch.dones[idx] {
                    0.0
                } else if t + 1 < steps {
                    batch.values[(t + 1) * lanes + l]
                } else {
                    batch.last_values[l]
                };
                let delta = batch.rewards[idx] + gamma * next_v - batch.values[idx];
                want += coef * delta;
                if batch.dones[idx] {
                    break;
                }
                coef *= gamma * lam;
            }
            let idx = t0 * lanes + l;
            assert!((adv[idx] - want).abs() < 1e-6, "lane {l} t {t0}: {} vs {want}", adv[idx]);
            assert!((ret[idx] - (adv[idx] + batch.values[idx])).abs() < 1e-6);
        }
    }
}

// ------------------------------------------------- gate 2: expert validity

#[test]
fn a2_scripted_expert_is_flawless_on_every_mini_task() {
    let t0 = Instant::now();
    let tasks = ["gotoredball-mini", "gotolocal-mini", "pickuploc-mini", "putnextlocal-mini"];
    let mut detail = String::new();
    for name in tasks {
        let task = env::preset(name).unwrap();
        let set = bot::generate_demos(&task, name, 1000, 99).unwrap();
        assert_eq!(set.demos.len(), 1000);
        for d in &set.demos {
            assert_eq!(d.end, EndCause::Done, "{name}: demo must end with Done");
            assert!(d.oracle_success, "{name}: demo must satisfy the oracle");
            assert_eq!(d.steps.last().unwrap().1, Action::Done);
            assert!(d.len() <= task.max_steps(), "{name}: demo overran the step limit");
        }
        detail.push_str(&format!("{name} ok; "));
    }
    let elapsed = t0.elapsed();
    report(
        2,
        elapsed < Duration::from_secs(120),
        &format!("{detail}4000 demos in {:.1}s (cap 120s)", elapsed.as_secs_f64()),
    );
}

// ---------------------------------------------- gate 3: cloning calibration

#[test]
fn a3_behavioral_cloning_solves_each_task_at_its_recorded_budget() {
    let tasks = ["gotoredball-mini", "gotolocal-mini", "pickuploc-mini", "putnextlocal-mini"];
    let mut detail = String::new();
    let mut ok = true;
    for task in tasks {
        let n = bc_demo_budget(task).unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.task = task.into();
        cfg.demos = ensure_demos(task, n);
        cfg.algo = Algo::Bc;
        cfg.seeds = vec![1];
        cfg.profile = PROFILE.into();
        cfg.max_updates = BC_MAX_UPDATES;
        cfg.budget_minutes = BC_CAP.as_secs_f64() / 60.0;
        cfg.eval_cadence = EVAL_CADENCE;
        cfg.eval_episodes = EVAL_EPISODES;
        let out = ensure_run(&format!("bc-{task}"), cfg);
        let (_, seed) = &out.seeds[0];
        let solved = seed.status == "SOLVED" || seed.final_success >= 0.99;
        let in_time = out.elapsed <= BC_CAP;
        ok &= solved && in_time;
        detail.push_str(&format!(
            "{task}: {} demos -> {} in {:.0}s; ",
            n,
            pct(seed.final_success),
            out.elapsed.as_secs_f64()
        ));
    }
    report(3, ok, &detail);
}

// --------------------------------- gate 4: the false-negative failure mode

fn baseline_gtl() -> RunOutcome {
    let n = bc_demo_budget("gotolocal-mini").unwrap();
    ensure_run(
        "gail-gtl-baseline",
        gail_config("gotolocal-mini", n, (1, 8), &[HeadKind::Conventional]),
    )
}

#[test]
fn a4_false_negatives_poison_the_reward_and_filtering_fixes_it() {
    let n = bc_demo_budget("gotolocal-mini").unwrap();
    let base = baseline_gtl();
    let of = ensure_run(
        "gail-gtl-of",
        gail_config("gotolocal-mini", n, (1, 8), &[HeadKind::OracleFiltered]),
    );

    // (i) in the baseline runs, once greedy success passes 50%, successful
    // agent episodes score at least 0.1 below expert episodes
    let mut gaps = Vec::new();
    for &seed in &SEEDS {
        let csv = fs::read_to_string(base.seed_dir(seed).join("metrics.csv")).unwrap();
        for line in csv.lines().skip(2) {
            let cols: Vec<&str> = line.split(',').collect();
            let (succ, exp, agt) = (cols[7], cols[9], cols[10]);
            if succ.is_empty() || exp.is_empty() || agt.is_empty() {
                continue;
            }
            if succ.parse::<Scalar>().unwrap() > 0.5 {
                gaps.push(exp.parse::<Scalar>().unwrap() - agt.parse::<Scalar>().unwrap());
            }
        }
    }
    let mean_gap = gaps.iter().sum::<Scalar>() / gaps.len().max(1) as Scalar;
    let gap_ok = !gaps.is_empty() && mean_gap >= 0.1;

    // (ii) oracle filtering beats the baseline by 5+ points
    let (b, o) = (base.mean_final(), of.mean_final());
    let beat_ok = o >= b + 0.05;
    let time_ok = base.elapsed <= GAIL_CAP * 3 && of.elapsed <= GAIL_CAP * 3;

    report(
        4,
        gap_ok && beat_ok && time_ok,
        &format!(
            "score gap on successes {:.3} over {} evals past 50% (need >=0.1); \
             filtered {} vs baseline {} (need +5pts); runtimes {:.0}s/{:.0}s",
            mean_gap,
            gaps.len(),
            pct(o),
            pct(b),
            base.elapsed.as_secs_f64(),
            of.elapsed.as_secs_f64()
        ),
    );
}

// ------------------------------------------- gate 5: the mitigation works

fn agentfcdd(task: &str, name: &str) -> RunOutcome {
    let n = bc_demo_budget(task).unwrap();
    ensure_run(
        name,
        gail_config(task, n, (1, 8), &[HeadKind::AgentFc, HeadKind::DoneDetector]),
    )
}

fn baseline_pnl() -> RunOutcome {
    let n = bc_demo_budget("putnextlocal-mini").unwrap();
    ensure_run(
        "gail-pnl-baseline",
        gail_config("putnextlocal-mini", n, (1, 8), &[HeadKind::Conventional]),
    )
}

#[test]
fn a5_fake_conditioning_with_done_detection_beats_the_baseline() {
    let gtl = agentfcdd("gotolocal-mini", "gail-gtl-agentfcdd");
    let pnl = agentfcdd("putnextlocal-mini", "gail-pnl-agentfcdd");
    let base_gtl = baseline_gtl();
    let base_pnl = baseline_pnl();

    let mut ok = true;
    let mut detail = String::new();
    for (task, run, base) in
        [("gotolocal-mini", &gtl, &base_gtl), ("putnextlocal-mini", &pnl, &base_pnl)]
    {
        let m = run.mean_final();
        let b = base.mean_final();
        ok &= m >= 0.90 && m >= b + 0.05;
        detail.push_str(&format!("{task}: {} (baseline {}); ", pct(m), pct(b)));
    }
    report(5, ok, &format!("{detail}need >=90% and baseline+5"));
}

// ----------------------------------- gate 6: done termination is load-bearing

#[test]
fn a6_dropping_done_termination_costs_at_least_ten_points() {
    let n = bc_demo_budget("putnextlocal-mini").unwrap();
    let with_dt = agentfcdd("putnextlocal-mini", "gail-pnl-agentfcdd");
    let mut cfg = gail_config(
        "putnextlocal-mini",
        n,
        (1, 8),
        &[HeadKind::AgentFc, HeadKind::DoneDetector],
    );
    cfg.done_termination = false;
    let without = ensure_run("gail-pnl-agentfcdd-nodt", cfg);

    let (w, wo) = (with_dt.mean_final(), without.mean_final());
    report(
        6,
        wo <= w - 0.10,
        &format!("with done termination {} vs without {} (need a 10+ point drop)", pct(w), pct(wo)),
    );
}

// ------------------------------- gate 7: sub-trajectory scoring doesn't help

#[test]
fn a7_subtrajectory_scoring_does_not_beat_full_trajectories() {
    let n = bc_demo_budget("putnextlocal-mini").unwrap();
    let base = baseline_pnl();
    let st = ensure_run(
        "gail-pnl-subtraj",
        gail_config("putnextlocal-mini", n, (1, 8), &[HeadKind::SubTrajectory]),
    );
    let (b, s) = (base.mean_final(), st.mean_final());
    report(
        7,
        s <= b + 0.02,
        &format!("sub-trajectory {} vs full-trajectory {} (tie allowed within 2pts)", pct(s), pct(b)),
    );
}

// ----------------------------------------- gate 8: single-goal transfer

#[test]
fn a8_gotolocal_training_transfers_to_the_single_goal_task() {
    let gtl = agentfcdd("gotolocal-mini", "gail-gtl-agentfcdd");
    // the direct reference: oracle-filtered training on the single-goal
    // task with the same number of demos the transfer agent saw
    let n_transfer = bc_demo_budget("gotolocal-mini").unwrap() / 8;
    let direct = ensure_run(
        "gail-grb-of-direct",
        gail_config("gotoredball-mini", n_transfer, (1, 1), &[HeadKind::OracleFiltered]),
    );

    let task = env::preset("gotoredball-mini").unwrap();
    let mut transfer_sum = 0.0 as Scalar;
    for &seed in &SEEDS {
        let run = load_run(&gtl.seed_dir(seed), false).unwrap();
        let rate = evaluate(
            &run.policy,
            &task,
            EVAL_EPISODES,
            Some("go to the red ball"),
            true,
            rng::derive(seed, "transfer-eval", 0),
        )
        .unwrap();
        transfer_sum += rate;
    }
    let transfer = transfer_sum / SEEDS.len() as Scalar;
    let d = direct.mean_final();
    report(
        8,
        transfer >= d - 0.03,
        &format!(
            "transferred policy {} vs directly trained {} (allowed to trail by 3pts)",
            pct(transfer),
            pct(d)
        ),
    );
}

// ----------------------------------------------------------- cache warmers
//
// Each heavy run group behind the gates, exposed as an ignored test so the
// cache can be filled one group at a time:
//   cargo test --release --test acceptance -- --ignored warm_<name>
// The gates themselves reuse whatever is already cached.

macro_rules! warmer {
    ($fn_name:ident, $body:expr) => {
        #[test]
        #[ignore]
        fn $fn_name() {
            let out: RunOutcome = $body;
            println!(
                "warmed {:?}: mean final {} in {:.0}s",
                out.dir.file_name().unwrap(),
                pct(out.mean_final()),
                out.elapsed.as_secs_f64()
            );
        }
    };
}

warmer!(warm_baseline_gtl, baseline_gtl());
warmer!(warm_of_gtl, {
    let n = bc_demo_budget("gotolocal-mini").unwrap();
    ensure_run("gail-gtl-of", gail_config("gotolocal-mini", n, (1, 8), &[HeadKind::OracleFiltered]))
});
warmer!(warm_agentfcdd_gtl, agentfcdd("gotolocal-mini", "gail-gtl-agentfcdd"));
warmer!(warm_baseline_pnl, baseline_pnl());
warmer!(warm_agentfcdd_pnl, agentfcdd("putnextlocal-mini", "gail-pnl-agentfcdd"));
warmer!(warm_agentfcdd_pnl_nodt, {
    let n = bc_demo_budget("putnextlocal-mini").unwrap();
    let mut cfg = gail_config(
        "putnextlocal-mini",
        n,
        (1, 8),
        &[HeadKind::AgentFc, HeadKind::DoneDetector],
    );
    cfg.done_termination = false;
    ensure_run("gail-pnl-agentfcdd-nodt", cfg)
});
warmer!(warm_subtraj_pnl, {
    let n = bc_demo_budget("putnextlocal-mini").unwrap();
    ensure_run(
        "gail-pnl-subtraj",
        gail_config("putnextlocal-mini", n, (1, 8), &[HeadKind::SubTrajectory]),
    )
});
warmer!(warm_of_grb_direct, {
    let n = bc_demo_budget("gotolocal-mini").unwrap() / 8;
    ensure_run(
        "gail-grb-of-direct",
        gail_config("gotoredball-mini", n, (1, 1), &[HeadKind::OracleFiltered]),
    )
});

// --------------------------------------------------------- sanity helpers

/// The demo fraction machinery the gates rely on: 1/8 of the recorded
/// corpus really is what the trainer sees.
#[test]
fn a0_demo_fractions_subsample_the_recorded_corpora() {
    let path = ensure_demos("gotoredball-mini", 64);
    let set = read_demos(&path).unwrap();
    let sub = subsample_demos(&set.demos, (1, 8), 1);
    assert_eq!(sub.len(), 8);
    for d in &sub {
        assert!(set.demos.contains(d));
    }
    // not a gate of its own; silence means the plumbing holds
}
