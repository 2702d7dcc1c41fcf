//! Breadth-first exploration of the product of all subject behaviors.
//!
//! A global state is every subject's location plus the contents of its input
//! pool, with pools truncated at `min(pool_bound, pool_capacity)`. Steps follow
//! the runtime: a send into a full pool is disabled (blocking send), a receive
//! consumes the first pool entry that matches any of its arms and takes the
//! first matching arm in document order, function-state outcomes are a free
//! choice, and a timeout arm is always an enabled alternative.
//!
//! The model is unsound when some reachable state has no enabled step while a
//! subject is short of an end state. The counterexample is the BFS path to
//! the first such state, so it is also a shortest one.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{codes, Diagnostic, Severity};
use crate::model::{behavior_file_name, Label, ProcessModel, StateKind, SID_FILE};
use crate::Ident;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Sound,
    Unsound,
    Inconclusive,
}

/// One interleaving step of the product system.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "lowercase")]
pub enum GlobalStep {
    Send { subject: Ident, message: Ident, to: Ident },
    Consume { subject: Ident, message: Ident, from: Ident },
    Choose { subject: Ident, outcome: String },
    Timeout { subject: Ident },
}

impl GlobalStep {
    pub fn subject(&self) -> &Ident {
        match self {
            GlobalStep::Send { subject, .. }
            | GlobalStep::Consume { subject, .. }
            | GlobalStep::Choose { subject, .. }
            | GlobalStep::Timeout { subject } => subject,
        }
    }
}

impl std::fmt::Display for GlobalStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GlobalStep::Send { subject, message, to } => write!(f, "{subject} sends {message} to {to}"),
            GlobalStep::Consume { subject, message, from } => {
                write!(f, "{subject} consumes {message} from {from}")
            }
            GlobalStep::Choose { subject, outcome } => write!(f, "{subject} chooses {outcome}"),
            GlobalStep::Timeout { subject } => write!(f, "{subject} times out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PoolEntry {
    pub message: Ident,
    pub from: Ident,
}

/// Global state of the product system: location and pool per subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductState {
    pub locations: BTreeMap<Ident, Ident>,
    pub pools: BTreeMap<Ident, Vec<PoolEntry>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SoundnessReport {
    pub verdict: Verdict,
    pub explored: usize,
    pub cap_hit: bool,
    pub pool_bound: u32,
    pub counterexample: Option<Vec<GlobalStep>>,
    /// The deadlocked state the counterexample leads to.
    pub deadlock: Option<ProductState>,
    /// Unconsumed-message warnings and skip notices; merged into the
    /// diagnostics list by [`super::validate`].
    #[serde(skip)]
    pub warnings: Vec<Diagnostic>,
}

impl SoundnessReport {
    pub(crate) fn skipped(pool_bound: u32) -> Self {
        SoundnessReport {
            verdict: Verdict::Inconclusive,
            explored: 0,
            cap_hit: false,
            pool_bound,
            counterexample: None,
            deadlock: None,
            warnings: Vec::new(),
        }
    }
}

struct Subject {
    id: Ident,
    bound: usize,
    states: Vec<LocalState>,
}

struct LocalState {
    id: Ident,
    end: bool,
    kind: StateKind,
    arms: Vec<Arm>,
}

struct Arm {
    kind: ArmKind,
    target: usize,
}

enum ArmKind {
    Outcome(String),
    Send { message: usize, to: usize },
    Receive { message: usize, from: usize },
    Timeout,
}

type Entry = (u16, u16);

#[derive(Clone, PartialEq, Eq, Hash)]
struct Global {
    locs: Vec<u16>,
    pools: Vec<Vec<Entry>>,
}

/// Compact step: subject index, arm index, and the consumed pool position.
#[derive(Clone, Copy)]
struct Move {
    subject: u16,
    arm: u16,
    taken: Option<Entry>,
}

struct Product<'m> {
    model: &'m ProcessModel,
    subjects: Vec<Subject>,
}

impl<'m> Product<'m> {
    fn build(m: &'m ProcessModel, pool_bound: u32) -> Self {
        let decls = m.internal_subjects();
        let subject_index = |id: &str| decls.iter().position(|s| s.id == id).expect("internal subject");
        let message_index = |id: &str| m.messages.iter().position(|d| d.id == id).expect("declared message");
        let subjects = decls
            .iter()
            .map(|decl| {
                let g = &m.behaviors[&decl.id];
                let states = g
                    .states
                    .iter()
                    .map(|s| LocalState {
                        id: s.id.clone(),
                        end: s.end,
                        kind: s.kind,
                        arms: g
                            .outgoing(&s.id)
                            .map(|t| Arm {
                                target: g.state_index(&t.to).expect("resolved"),
                                kind: match &t.label {
                                    Label::Outcome { name } => ArmKind::Outcome(name.clone()),
                                    Label::Send { message, to } => ArmKind::Send {
                                        message: message_index(message),
                                        to: subject_index(to),
                                    },
                                    Label::Receive { message, from } => ArmKind::Receive {
                                        message: message_index(message),
                                        from: subject_index(from),
                                    },
                                    Label::Timeout => ArmKind::Timeout,
                                },
                            })
                            .collect(),
                    })
                    .collect();
                Subject {
                    id: decl.id.clone(),
                    bound: pool_bound.min(decl.pool_capacity) as usize,
                    states,
                }
            })
            .collect();
        Product { model: m, subjects }
    }

    fn initial(&self) -> Global {
        Global {
            locs: self
                .subjects
                .iter()
                .map(|s| {
                    let g = &self.model.behaviors[&s.id];
                    g.states.iter().position(|st| st.start).expect("one start state") as u16
                })
                .collect(),
            pools: vec![Vec::new(); self.subjects.len()],
        }
    }

    fn all_ended(&self, g: &Global) -> bool {
        self.subjects
            .iter()
            .zip(&g.locs)
            .all(|(s, &loc)| s.states[loc as usize].end)
    }

    /// Enabled moves in canonical order: subjects by id, arms in document
    /// order, a receive's consume before its timeout.
    fn successors(&self, g: &Global) -> Vec<(Move, Global)> {
        let mut out = Vec::new();
        for (si, subj) in self.subjects.iter().enumerate() {
            let state = &subj.states[g.locs[si] as usize];
            if state.end {
                continue;
            }
            match state.kind {
                StateKind::Function => {
                    for (ai, arm) in state.arms.iter().enumerate() {
                        if let ArmKind::Outcome(_) = arm.kind {
                            let mut next = g.clone();
                            next.locs[si] = arm.target as u16;
                            out.push((mv(si, ai, None), next));
                        }
                    }
                }
                StateKind::Send => {
                    for (ai, arm) in state.arms.iter().enumerate() {
                        if let ArmKind::Send { message, to } = arm.kind {
                            if g.pools[to].len() < self.subjects[to].bound {
                                let mut next = g.clone();
                                next.pools[to].push((message as u16, si as u16));
                                next.locs[si] = arm.target as u16;
                                out.push((mv(si, ai, None), next));
                            }
                        }
                    }
                }
                StateKind::Receive => {
                    let matched = g.pools[si].iter().enumerate().find_map(|(pos, &(msg, from))| {
                        state
                            .arms
                            .iter()
                            .position(|a| {
                                matches!(a.kind, ArmKind::Receive { message, from: f }
                                    if message as u16 == msg && f as u16 == from)
                            })
                            .map(|ai| (pos, ai))
                    });
                    if let Some((pos, ai)) = matched {
                        let mut next = g.clone();
                        let taken = next.pools[si].remove(pos);
                        next.locs[si] = state.arms[ai].target as u16;
                        out.push((mv(si, ai, Some(taken)), next));
                    }
                    if let Some(ai) = state.arms.iter().position(|a| matches!(a.kind, ArmKind::Timeout)) {
                        let mut next = g.clone();
                        next.locs[si] = state.arms[ai].target as u16;
                        out.push((mv(si, ai, None), next));
                    }
                }
            }
        }
        out
    }

    fn describe(&self, from: &Global, m: Move) -> GlobalStep {
        let si = m.subject as usize;
        let subj = &self.subjects[si];
        let arm = &subj.states[from.locs[si] as usize].arms[m.arm as usize];
        let subject = subj.id.clone();
        let msg_id = |i: usize| self.model.messages[i].id.clone();
        match &arm.kind {
            ArmKind::Outcome(name) => GlobalStep::Choose {
                subject,
                outcome: name.clone(),
            },
            ArmKind::Send { message, to } => GlobalStep::Send {
                subject,
                message: msg_id(*message),
                to: self.subjects[*to].id.clone(),
            },
            ArmKind::Receive { .. } => {
                let (msg, from_subject) = m.taken.expect("consume records its entry");
                GlobalStep::Consume {
                    subject,
                    message: msg_id(msg as usize),
                    from: self.subjects[from_subject as usize].id.clone(),
                }
            }
            ArmKind::Timeout => GlobalStep::Timeout { subject },
        }
    }

    fn export(&self, g: &Global) -> ProductState {
        let mut locations = BTreeMap::new();
        let mut pools = BTreeMap::new();
        for (si, subj) in self.subjects.iter().enumerate() {
            locations.insert(subj.id.clone(), subj.states[g.locs[si] as usize].id.clone());
            pools.insert(
                subj.id.clone(),
                g.pools[si]
                    .iter()
                    .map(|&(msg, from)| PoolEntry {
                        message: self.model.messages[msg as usize].id.clone(),
                        from: self.subjects[from as usize].id.clone(),
                    })
                    .collect(),
            );
        }
        ProductState { locations, pools }
    }
}

fn mv(subject: usize, arm: usize, taken: Option<Entry>) -> Move {
    Move {
        subject: subject as u16,
        arm: arm as u16,
        taken,
    }
}

/// Explores the product state space of `m` breadth-first.
///
/// Models with external subjects are reported inconclusive with an info
/// diagnostic. Exploration stops at the first deadlock or when more than
/// `state_cap` distinct states would be visited.
pub fn check_soundness(m: &ProcessModel, pool_bound: u32, state_cap: usize) -> SoundnessReport {
    let pool_bound = pool_bound.max(1);
    let mut report = SoundnessReport::skipped(pool_bound);
    if m.has_external_subjects() {
        report.warnings.push(Diagnostic::new(
            Severity::Info,
            codes::SOUND_EXTERNAL,
            SID_FILE,
            m.id.as_str(),
            "model has external subjects; interaction soundness is not decided",
        ));
        return report;
    }

    let product = Product::build(m, pool_bound);
    let mut arena: Vec<Global> = Vec::new();
    let mut parent: Vec<Option<(usize, Move)>> = Vec::new();
    let mut index: HashMap<Global, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    let mut warned: HashSet<(usize, u16)> = HashSet::new();

    let init = product.initial();
    index.insert(init.clone(), 0);
    arena.push(init);
    parent.push(None);
    queue.push_back(0usize);

    while let Some(cur) = queue.pop_front() {
        let state = arena[cur].clone();
        for (si, subj) in product.subjects.iter().enumerate() {
            let loc = state.locs[si];
            let local = &subj.states[loc as usize];
            if local.end && !state.pools[si].is_empty() && warned.insert((si, loc)) {
                report.warnings.push(Diagnostic::new(
                    Severity::Warning,
                    codes::SOUND_UNCONSUMED,
                    behavior_file_name(&subj.id),
                    local.id.as_str(),
                    format!("`{}` can end in `{}` with unconsumed messages in its pool", subj.id, local.id),
                ));
            }
        }

        let succ = product.successors(&state);
        if succ.is_empty() && !product.all_ended(&state) {
            let mut path = Vec::new();
            let mut at = cur;
            while let Some((prev, m)) = parent[at] {
                path.push(product.describe(&arena[prev], m));
                at = prev;
            }
            path.reverse();
            report.verdict = Verdict::Unsound;
            report.counterexample = Some(path);
            report.deadlock = Some(product.export(&state));
            report.explored = arena.len();
            return report;
        }

        for (m, next) in succ {
            if index.contains_key(&next) {
                continue;
            }
            if arena.len() >= state_cap {
                report.cap_hit = true;
                report.explored = arena.len();
                return report;
            }
            index.insert(next.clone(), arena.len());
            arena.push(next);
            parent.push(Some((cur, m)));
            queue.push_back(arena.len() - 1);
        }
    }

    report.verdict = Verdict::Sound;
    report.explored = arena.len();
    report
}
