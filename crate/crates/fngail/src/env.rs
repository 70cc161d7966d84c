//! Deterministic, seeded, partially-observable single-room gridworld with
//! four instruction task families and a hidden success oracle.
//!
//! Cell kind ids: 0 empty, 1 wall, 2 ball, 3 key, 4 box.
//! Color ids: 0 red, 1 green, 2 blue, 3 purple, 4 yellow, 5 grey.
//! Action ids: 0 Left, 1 Right, 2 Forward, 3 Pickup, 4 Drop, 5 Done.

use crate::lang::Instruction;
use crate::rng;
use rand::Rng as _;
use thiserror::Error;

pub const VIEW: usize = 7;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("invalid task config: {0}")]
    Config(String),
    #[error("episode already ended; reset before stepping")]
    EpisodeEnded,
    #[error("no solvable instance found for seed {seed} after {attempts} attempts")]
    Unsolvable { seed: u64, attempts: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Red,
    Green,
    Blue,
    Purple,
    Yellow,
    Grey,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Purple,
        Color::Yellow,
        Color::Grey,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Color> {
        Color::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Purple => "purple",
            Color::Yellow => "yellow",
            Color::Grey => "grey",
        }
    }

    pub fn from_name(name: &str) -> Option<Color> {
        Color::ALL.iter().copied().find(|c| c.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Ball,
    Key,
    Box,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::Ball, Kind::Key, Kind::Box];

    /// Cell-encoding id (2..4; 0 is empty, 1 is wall).
    pub fn cell_id(self) -> u8 {
        match self {
            Kind::Ball => 2,
            Kind::Key => 3,
            Kind::Box => 4,
        }
    }

    pub fn from_cell_id(id: u8) -> Option<Kind> {
        match id {
            2 => Some(Kind::Ball),
            3 => Some(Kind::Key),
            4 => Some(Kind::Box),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Ball => "ball",
            Kind::Key => "key",
            Kind::Box => "box",
        }
    }

    pub fn from_name(name: &str) -> Option<Kind> {
        Kind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Obj {
    pub kind: Kind,
    pub color: Color,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Empty,
    Wall,
    Object(Obj),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub fn new(x: i32, y: i32) -> Pos {
        Pos { x, y }
    }

    pub fn add(self, d: (i32, i32)) -> Pos {
        Pos::new(self.x + d.0, self.y + d.1)
    }

    pub fn manhattan(self, o: Pos) -> i32 {
        (self.x - o.x).abs() + (self.y - o.y).abs()
    }
}

/// Cardinal facing. y grows downward, so North is -y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    East,
    South,
    West,
    North,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::East, Dir::South, Dir::West, Dir::North];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn vec(self) -> (i32, i32) {
        match self {
            Dir::East => (1, 0),
            Dir::South => (0, 1),
            Dir::West => (-1, 0),
            Dir::North => (0, -1),
        }
    }

    pub fn left(self) -> Dir {
        Dir::ALL[((self as usize) + 3) % 4]
    }

    pub fn right(self) -> Dir {
        Dir::ALL[((self as usize) + 1) % 4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Left,
    Right,
    Forward,
    Pickup,
    Drop,
    Done,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Left,
        Action::Right,
        Action::Forward,
        Action::Pickup,
        Action::Drop,
        Action::Done,
    ];
    pub const COUNT: usize = 6;

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Action> {
        Action::ALL.get(id as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskFamily {
    GoToRedBall,
    GoToLocal,
    PickupLoc,
    PutNextLocal,
}

impl TaskFamily {
    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::GoToRedBall => "gotoredball",
            TaskFamily::GoToLocal => "gotolocal",
            TaskFamily::PickupLoc => "pickuploc",
            TaskFamily::PutNextLocal => "putnextlocal",
        }
    }
}

/// Location phrase for PickupLoc, judged in the agent's initial frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LocPhrase {
    InFront,
    Behind,
    OnLeft,
    OnRight,
}

impl LocPhrase {
    pub fn words(self) -> &'static [&'static str] {
        match self {
            LocPhrase::InFront => &["in", "front", "of", "you"],
            LocPhrase::Behind => &["behind", "you"],
            LocPhrase::OnLeft => &["on", "your", "left"],
            LocPhrase::OnRight => &["on", "your", "right"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub family: TaskFamily,
    /// Interior cells per side; out-of-bounds acts as wall.
    pub room_size: usize,
    pub distractors: usize,
    pub colors: Vec<Color>,
    pub kinds: Vec<Kind>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.room_size < 5 {
            return Err(EnvError::Config(format!(
                "room_size {} < 5",
                self.room_size
            )));
        }
        if self.colors.is_empty() || self.kinds.is_empty() {
            return Err(EnvError::Config("empty color or kind pool".into()));
        }
        let named = match self.family {
            TaskFamily::PutNextLocal => 2,
            _ => 1,
        };
        // One cell for the agent, one kept free so PutNext drops always fit.
        let cells = self.room_size * self.room_size;
        if named + self.distractors + 2 > cells {
            return Err(EnvError::Config(format!(
                "{} objects cannot fit in a {}x{} room",
                named + self.distractors,
                self.room_size,
                self.room_size
            )));
        }
        if self.family == TaskFamily::GoToRedBall
            && !(self.colors.contains(&Color::Red) && self.kinds.contains(&Kind::Ball))
        {
            return Err(EnvError::Config("gotoredball needs red and ball in pools".into()));
        }
        if self.family == TaskFamily::PutNextLocal && self.colors.len() * self.kinds.len() < 2 {
            return Err(EnvError::Config("putnextlocal needs two distinct object types".into()));
        }
        Ok(())
    }

    pub fn max_steps(&self) -> usize {
        8 * self.room_size
    }
}

/// Structured goal parsed back out of an instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    GoTo(Obj),
    Pickup(Obj, Option<LocPhrase>),
    PutNext { moved: Obj, reference: Obj },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndCause {
    Done,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
    pub agent_pos: Pos,
    pub agent_dir: Dir,
    pub carried: Option<Obj>,
    pub initial_agent_pos: Pos,
    pub initial_agent_dir: Dir,
    /// Generation-time object placements, in placement order. Frozen at reset.
    pub initial_objects: Vec<(Obj, Pos)>,
    pub step_count: usize,
    pub max_steps: usize,
    pub ended: Option<EndCause>,
}

impl WorldState {
    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    pub fn cell(&self, p: Pos) -> Cell {
        if self.in_bounds(p) {
            self.cells[p.y as usize * self.width + p.x as usize]
        } else {
            Cell::Wall
        }
    }

    fn set_cell(&mut self, p: Pos, c: Cell) {
        let w = self.width;
        self.cells[p.y as usize * w + p.x as usize] = c;
    }

    pub fn front_pos(&self) -> Pos {
        self.agent_pos.add(self.agent_dir.vec())
    }

    /// Current grid cell of the unique object matching `obj`, if any.
    pub fn find_object(&self, obj: Obj) -> Option<Pos> {
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                let p = Pos::new(x, y);
                if self.cell(p) == Cell::Object(obj) {
                    return Some(p);
                }
            }
        }
        None
    }

    pub fn initial_pos_of(&self, obj: Obj) -> Option<Pos> {
        self.initial_objects
            .iter()
            .find(|(o, _)| *o == obj)
            .map(|(_, p)| *p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Observation {
    /// 7x7x(kind, color, occluded), row 6 = agent's row, facing up the grid.
    pub grid: [[[u8; 3]; VIEW]; VIEW],
    /// (kind id, color id); kind 0 means empty-handed.
    pub carrying: (u8, u8),
}

impl Observation {
    pub fn zeros() -> Observation {
        Observation { grid: [[[0; 3]; VIEW]; VIEW], carrying: (0, 0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub terminated: bool,
    pub timeout: bool,
}

/// Egocentric 7x7 view; pure function of the state.
pub fn observe(state: &WorldState) -> Observation {
    let mut obs = Observation::zeros();
    let front = state.agent_dir.vec();
    let right = state.agent_dir.right().vec();
    for r in 0..VIEW {
        for c in 0..VIEW {
            let fwd = (VIEW - 1 - r) as i32;
            let side = c as i32 - (VIEW as i32 / 2);
            let p = Pos::new(
                state.agent_pos.x + fwd * front.0 + side * right.0,
                state.agent_pos.y + fwd * front.1 + side * right.1,
            );
            obs.grid[r][c] = if state.in_bounds(p) {
                match state.cell(p) {
                    Cell::Empty => [0, 0, 0],
                    Cell::Wall => [1, Color::Grey.id(), 0],
                    Cell::Object(o) => [o.kind.cell_id(), o.color.id(), 0],
                }
            } else {
                [0, 0, 1]
            };
        }
    }
    if let Some(o) = state.carried {
        obs.carrying = (o.kind.cell_id(), o.color.id());
    }
    obs
}

/// Advance one step; Done terminates the episode.
pub fn step(state: &mut WorldState, action: Action) -> Result<StepResult, EnvError> {
    step_mode(state, action, true)
}

/// Advance one step. With `done_terminates` false the Done action is a no-op
/// movement and episodes end only on timeout.
pub fn step_mode(
    state: &mut WorldState,
    action: Action,
    done_terminates: bool,
) -> Result<StepResult, EnvError> {
    if state.ended.is_some() {
        return Err(EnvError::EpisodeEnded);
    }
    let mut done_action = false;
    match action {
        Action::Left => state.agent_dir = state.agent_dir.left(),
        Action::Right => state.agent_dir = state.agent_dir.right(),
        Action::Forward => {
            let target = state.front_pos();
            if state.cell(target) == Cell::Empty {
                state.agent_pos = target;
            }
        }
        Action::Pickup => {
            let target = state.front_pos();
            if state.carried.is_none() {
                if let Cell::Object(o) = state.cell(target) {
                    state.carried = Some(o);
                    state.set_cell(target, Cell::Empty);
                }
            }
        }
        Action::Drop => {
            let target = state.front_pos();
            if let Some(o) = state.carried {
                if state.in_bounds(target) && state.cell(target) == Cell::Empty {
                    state.set_cell(target, Cell::Object(o));
                    state.carried = None;
                }
            }
        }
        Action::Done => done_action = true,
    }
    state.step_count += 1;
    if done_action && done_terminates {
        state.ended = Some(EndCause::Done);
    } else if state.step_count >= state.max_steps {
        state.ended = Some(EndCause::Timeout);
    }
    Ok(StepResult {
        obs: observe(state),
        terminated: state.ended == Some(EndCause::Done),
        timeout: state.ended == Some(EndCause::Timeout),
    })
}

/// Hidden success predicate. Never exposed to the policy or to any
/// discriminator loss other than the oracle-filtered one.
pub fn oracle_success(state: &WorldState, instr: &Instruction) -> bool {
    let goal = parse_goal(instr).expect("instruction must come from the task grammar");
    match goal {
        Goal::GoTo(obj) => state.cell(state.front_pos()) == Cell::Object(obj),
        Goal::Pickup(obj, loc) => {
            if state.carried != Some(obj) {
                return false;
            }
            match loc {
                None => true,
                Some(phrase) => match state.initial_pos_of(obj) {
                    Some(p0) => loc_of(p0, state.initial_agent_pos, state.initial_agent_dir)
                        == Some(phrase),
                    None => false,
                },
            }
        }
        Goal::PutNext { moved, reference } => {
            if state.carried == Some(moved) || state.carried == Some(reference) {
                return false;
            }
            let ref_init = match state.initial_pos_of(reference) {
                Some(p) => p,
                None => return false,
            };
            if state.cell(ref_init) != Cell::Object(reference) {
                return false;
            }
            match state.find_object(moved) {
                Some(p) => p.manhattan(ref_init) == 1,
                None => false,
            }
        }
    }
}

/// Location phrase of `p` relative to the pose `(origin, dir)`, by dominant
/// axis; None on a tie (generation rejects those).
pub fn loc_of(p: Pos, origin: Pos, dir: Dir) -> Option<LocPhrase> {
    let d = (p.x - origin.x, p.y - origin.y);
    let front = dir.vec();
    let right = dir.right().vec();
    let f = d.0 * front.0 + d.1 * front.1;
    let r = d.0 * right.0 + d.1 * right.1;
    if f.abs() == r.abs() {
        return None;
    }
    Some(if f.abs() > r.abs() {
        if f > 0 {
            LocPhrase::InFront
        } else {
            LocPhrase::Behind
        }
    } else if r > 0 {
        LocPhrase::OnRight
    } else {
        LocPhrase::OnLeft
    })
}

pub fn render_goal(goal: &Goal) -> String {
    match goal {
        Goal::GoTo(o) => format!("go to the {} {}", o.color.name(), o.kind.name()),
        Goal::Pickup(o, loc) => {
            let mut s = format!("pick up the {} {}", o.color.name(), o.kind.name());
            if let Some(l) = loc {
                for w in l.words() {
                    s.push(' ');
                    s.push_str(w);
                }
            }
            s
        }
        Goal::PutNext { moved, reference } => format!(
            "put the {} {} next to the {} {}",
            moved.color.name(),
            moved.kind.name(),
            reference.color.name(),
            reference.kind.name()
        ),
    }
}

pub fn parse_goal(instr: &Instruction) -> Option<Goal> {
    let words: Vec<&str> = instr.text.split_whitespace().collect();
    let obj_at = |i: usize| -> Option<Obj> {
        Some(Obj {
            color: Color::from_name(words.get(i)?)?,
            kind: Kind::from_name(words.get(i + 1)?)?,
        })
    };
    match words.first()? {
        &"go" => {
            // go to the <color> <kind>
            if words.len() == 5 && words[1] == "to" && words[2] == "the" {
                Some(Goal::GoTo(obj_at(3)?))
            } else {
                None
            }
        }
        &"pick" => {
            // pick up the <color> <kind> [<loc>]
            if words.len() < 5 || words[1] != "up" || words[2] != "the" {
                return None;
            }
            let obj = obj_at(3)?;
            if words.len() == 5 {
                return Some(Goal::Pickup(obj, None));
            }
            let tail = &words[5..];
            let loc = [
                LocPhrase::InFront,
                LocPhrase::Behind,
                LocPhrase::OnLeft,
                LocPhrase::OnRight,
            ]
            .into_iter()
            .find(|l| l.words() == tail)?;
            Some(Goal::Pickup(obj, Some(loc)))
        }
        &"put" => {
            // put the <c> <k> next to the <c> <k>
            if words.len() == 9
                && words[1] == "the"
                && words[4] == "next"
                && words[5] == "to"
                && words[6] == "the"
            {
                Some(Goal::PutNext { moved: obj_at(2)?, reference: obj_at(7)? })
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Assemble a state by hand; used for crafted scenarios in tests and tools.
pub fn build_state(
    size: usize,
    agent_pos: Pos,
    agent_dir: Dir,
    objects: &[(Obj, Pos)],
) -> WorldState {
    let mut state = WorldState {
        width: size,
        height: size,
        cells: vec![Cell::Empty; size * size],
        agent_pos,
        agent_dir,
        carried: None,
        initial_agent_pos: agent_pos,
        initial_agent_dir: agent_dir,
        initial_objects: objects.to_vec(),
        step_count: 0,
        max_steps: 8 * size,
        ended: None,
    };
    for &(o, p) in objects {
        state.set_cell(p, Cell::Object(o));
    }
    state
}

const MAX_GEN_ATTEMPTS: u32 = 1000;

/// Build a solvable episode. Identical (task, seed) pairs yield identical
/// states and instructions.
pub fn reset(task: &TaskSpec, seed: u64) -> Result<(WorldState, Instruction), EnvError> {
    task.validate()?;
    for attempt in 0..MAX_GEN_ATTEMPTS {
        let mut rng = rng::stream(seed, "env-gen", attempt as u64);
        if let Some((state, goal)) = try_generate(task, &mut rng) {
            let instr = Instruction::from_text(&render_goal(&goal), Some(task.family))
                .expect("grammar strings always tokenize");
            // Accept only instances the scripted expert can actually finish.
            if let Some(plan) = crate::bot::try_solve(&state, &instr) {
                if plan.actions.len() < state.max_steps {
                    return Ok((state, instr));
                }
            }
        }
    }
    Err(EnvError::Unsolvable { seed, attempts: MAX_GEN_ATTEMPTS })
}

fn try_generate(task: &TaskSpec, rng: &mut rng::Rng) -> Option<(WorldState, Goal)> {
    let size = task.room_size;
    let mut state = WorldState {
        width: size,
        height: size,
        cells: vec![Cell::Empty; size * size],
        agent_pos: Pos::new(0, 0),
        agent_dir: Dir::East,
        carried: None,
        initial_agent_pos: Pos::new(0, 0),
        initial_agent_dir: Dir::East,
        initial_objects: Vec::new(),
        step_count: 0,
        max_steps: task.max_steps(),
        ended: None,
    };
    state.agent_pos = Pos::new(
        rng.gen_range(0..size as i32),
        rng.gen_range(0..size as i32),
    );
    state.agent_dir = Dir::ALL[rng.gen_range(0..4)];
    state.initial_agent_pos = state.agent_pos;
    state.initial_agent_dir = state.agent_dir;

    let combos: Vec<Obj> = task
        .kinds
        .iter()
        .flat_map(|&k| task.colors.iter().map(move |&c| Obj { kind: k, color: c }))
        .collect();

    let named: Vec<Obj> = match task.family {
        TaskFamily::GoToRedBall => vec![Obj { kind: Kind::Ball, color: Color::Red }],
        TaskFamily::GoToLocal | TaskFamily::PickupLoc => {
            vec![combos[rng.gen_range(0..combos.len())]]
        }
        TaskFamily::PutNextLocal => {
            let a = combos[rng.gen_range(0..combos.len())];
            let rest: Vec<Obj> = combos.iter().copied().filter(|&o| o != a).collect();
            let b = rest[rng.gen_range(0..rest.len())];
            vec![a, b]
        }
    };

    let place = |state: &mut WorldState, obj: Obj, rng: &mut rng::Rng| -> Option<Pos> {
        for _ in 0..100 {
            let p = Pos::new(
                rng.gen_range(0..size as i32),
                rng.gen_range(0..size as i32),
            );
            if p != state.agent_pos && state.cell(p) == Cell::Empty {
                state.set_cell(p, Cell::Object(obj));
                state.initial_objects.push((obj, p));
                return Some(p);
            }
        }
        None
    };

    let mut named_pos = Vec::new();
    for &o in &named {
        named_pos.push(place(&mut state, o, rng)?);
    }
    // A PutNext instance that starts already satisfied teaches nothing;
    // resample instead.
    if task.family == TaskFamily::PutNextLocal && named_pos[0].manhattan(named_pos[1]) == 1 {
        return None;
    }
    // Distractors never reuse a named (color, kind) pair, so instruction
    // targets stay unique in the scene.
    let distract_pool: Vec<Obj> =
        combos.iter().copied().filter(|o| !named.contains(o)).collect();
    for _ in 0..task.distractors {
        if distract_pool.is_empty() {
            return None;
        }
        let o = distract_pool[rng.gen_range(0..distract_pool.len())];
        place(&mut state, o, rng)?;
    }

    let goal = match task.family {
        TaskFamily::GoToRedBall | TaskFamily::GoToLocal => Goal::GoTo(named[0]),
        TaskFamily::PickupLoc => {
            let with_loc = rng.gen_bool(0.5);
            if with_loc {
                let phrase =
                    loc_of(named_pos[0], state.initial_agent_pos, state.initial_agent_dir)?;
                Goal::Pickup(named[0], Some(phrase))
            } else {
                Goal::Pickup(named[0], None)
            }
        }
        TaskFamily::PutNextLocal => Goal::PutNext { moved: named[0], reference: named[1] },
    };
    Some((state, goal))
}

/// Named task presets. `-mini` variants are the desk-scale configurations
/// used by the test suites; plain names are the larger versions.
pub fn preset(name: &str) -> Option<TaskSpec> {
    let mini_colors = vec![Color::Red, Color::Green, Color::Blue];
    let mini_kinds = vec![Kind::Ball, Kind::Key, Kind::Box];
    let spec = match name {
        "gotoredball-mini" => TaskSpec {
            family: TaskFamily::GoToRedBall,
            room_size: 5,
            distractors: 2,
            colors: mini_colors,
            kinds: mini_kinds,
        },
        "gotolocal-mini" => TaskSpec {
            family: TaskFamily::GoToLocal,
            room_size: 6,
            distractors: 3,
            colors: mini_colors,
            kinds: mini_kinds,
        },
        "pickuploc-mini" => TaskSpec {
            family: TaskFamily::PickupLoc,
            room_size: 6,
            distractors: 3,
            colors: mini_colors,
            kinds: mini_kinds,
        },
        "putnextlocal-mini" => TaskSpec {
            family: TaskFamily::PutNextLocal,
            room_size: 6,
            distractors: 3,
            colors: mini_colors,
            kinds: mini_kinds,
        },
        "gotoredball" => TaskSpec {
            family: TaskFamily::GoToRedBall,
            room_size: 7,
            distractors: 5,
            colors: Color::ALL.to_vec(),
            kinds: Kind::ALL.to_vec(),
        },
        "gotolocal" => TaskSpec {
            family: TaskFamily::GoToLocal,
            room_size: 7,
            distractors: 5,
            colors: Color::ALL.to_vec(),
            kinds: Kind::ALL.to_vec(),
        },
        "pickuploc" => TaskSpec {
            family: TaskFamily::PickupLoc,
            room_size: 7,
            distractors: 5,
            colors: Color::ALL.to_vec(),
            kinds: Kind::ALL.to_vec(),
        },
        "putnextlocal" => TaskSpec {
            family: TaskFamily::PutNextLocal,
            room_size: 7,
            distractors: 5,
            colors: Color::ALL.to_vec(),
            kinds: Kind::ALL.to_vec(),
        },
        _ => return None,
    };
    Some(spec)
}

pub const PRESET_NAMES: [&str; 8] = [
    "gotoredball-mini",
    "gotolocal-mini",
    "pickuploc-mini",
    "putnextlocal-mini",
    "gotoredball",
    "gotolocal",
    "pickuploc",
    "putnextlocal",
];
