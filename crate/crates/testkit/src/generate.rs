//! Seeded random process models for property tests.
//!
//! Half of the models are projections of a random global interaction
//! sequence (so they tend to be sound), the other half are wired at random.
//! Either way some extra arms are sprinkled in afterwards. Every model has
//! at most four subjects and six states per subject, every state is
//! reachable along a chain, and only the last state of a behavior is an end.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbpm_core::model::{BehaviorGraph, Label, MessageDecl, ProcessModel, State, StateKind, SubjectDecl, Transition};
use sbpm_core::Ident;

pub const MAX_SUBJECTS: usize = 4;
pub const MAX_STATES: usize = 6;
const MESSAGES_PER_PAIR: usize = 2;

fn id(s: impl AsRef<str>) -> Ident {
    s.as_ref().parse().expect("generated identifier")
}

fn subject_id(i: usize) -> Ident {
    id(format!("S{i}"))
}

fn message_id(from: usize, to: usize, k: usize) -> Ident {
    id(format!("m{from}{to}{k}"))
}

/// Local plan for one state before it becomes XML-level structure.
struct Draft {
    kind: StateKind,
    arms: Vec<(Label, usize)>,
    timeout: bool,
}

/// Generates one model from `seed`. Equal seeds give equal models.
pub fn random_model(seed: u64) -> ProcessModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=MAX_SUBJECTS);
    let mut drafts: Vec<Vec<Draft>> = if n > 1 && rng.gen_bool(0.5) {
        projected(&mut rng, n)
    } else {
        wired(&mut rng, n)
    };
    for (si, states) in drafts.iter_mut().enumerate() {
        sprinkle(&mut rng, n, si, states);
    }
    assemble(seed, &mut rng, drafts)
}

/// Chains built from a random global sequence of interactions.
fn projected(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<Draft>> {
    let mut chains: Vec<Vec<Draft>> = (0..n).map(|_| Vec::new()).collect();
    let steps = rng.gen_range(1..=8);
    for _ in 0..steps {
        let from = rng.gen_range(0..n);
        let mut to = rng.gen_range(0..n - 1);
        if to >= from {
            to += 1;
        }
        // Leave room for the end state in both chains.
        if chains[from].len() >= MAX_STATES - 1 || chains[to].len() >= MAX_STATES - 1 {
            continue;
        }
        let msg = message_id(from, to, rng.gen_range(0..MESSAGES_PER_PAIR));
        let (sf, st) = (chains[from].len(), chains[to].len());
        chains[from].push(Draft {
            kind: StateKind::Send,
            arms: vec![(Label::Send { message: msg.clone(), to: subject_id(to) }, sf + 1)],
            timeout: false,
        });
        chains[to].push(Draft {
            kind: StateKind::Receive,
            arms: vec![(Label::Receive { message: msg, from: subject_id(from) }, st + 1)],
            timeout: false,
        });
    }
    for chain in &mut chains {
        // Occasionally slip a function state in front.
        if chain.len() < MAX_STATES - 1 && rng.gen_bool(0.3) {
            for d in chain.iter_mut() {
                for arm in &mut d.arms {
                    arm.1 += 1;
                }
            }
            chain.insert(
                0,
                Draft {
                    kind: StateKind::Function,
                    arms: vec![(Label::Outcome { name: "go".into() }, 1)],
                    timeout: false,
                },
            );
        }
        chain.push(end_draft());
    }
    chains
}

/// Chains whose kinds and messages are drawn independently per state.
fn wired(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<Draft>> {
    (0..n)
        .map(|si| {
            let len = rng.gen_range(2..=MAX_STATES);
            let mut chain: Vec<Draft> = (0..len - 1)
                .map(|i| {
                    let kind = if n == 1 {
                        StateKind::Function
                    } else {
                        [StateKind::Function, StateKind::Send, StateKind::Receive][rng.gen_range(0..3)]
                    };
                    let label = match kind {
                        StateKind::Function => Label::Outcome { name: "go".into() },
                        StateKind::Send => {
                            let to = other(rng, n, si);
                            Label::Send {
                                message: message_id(si, to, rng.gen_range(0..MESSAGES_PER_PAIR)),
                                to: subject_id(to),
                            }
                        }
                        StateKind::Receive => {
                            let from = other(rng, n, si);
                            Label::Receive {
                                message: message_id(from, si, rng.gen_range(0..MESSAGES_PER_PAIR)),
                                from: subject_id(from),
                            }
                        }
                    };
                    Draft {
                        kind,
                        arms: vec![(label, i + 1)],
                        timeout: false,
                    }
                })
                .collect();
            chain.push(end_draft());
            chain
        })
        .collect()
}

fn end_draft() -> Draft {
    Draft {
        kind: StateKind::Function,
        arms: Vec::new(),
        timeout: false,
    }
}

fn other(rng: &mut ChaCha8Rng, n: usize, me: usize) -> usize {
    let k = rng.gen_range(0..n - 1);
    if k >= me {
        k + 1
    } else {
        k
    }
}

/// Adds random extra arms (including backward ones) and timeouts.
fn sprinkle(rng: &mut ChaCha8Rng, n: usize, si: usize, states: &mut [Draft]) {
    let len = states.len();
    for d in states.iter_mut().take(len - 1) {
        if rng.gen_bool(0.25) {
            let target = rng.gen_range(0..len);
            let label = match d.kind {
                StateKind::Function => Label::Outcome {
                    name: format!("alt{}", d.arms.len()),
                },
                StateKind::Send => {
                    let to = other(rng, n, si);
                    Label::Send {
                        message: message_id(si, to, rng.gen_range(0..MESSAGES_PER_PAIR)),
                        to: subject_id(to),
                    }
                }
                StateKind::Receive => {
                    let from = other(rng, n, si);
                    Label::Receive {
                        message: message_id(from, si, rng.gen_range(0..MESSAGES_PER_PAIR)),
                        from: subject_id(from),
                    }
                }
            };
            if !d.arms.iter().any(|(l, _)| *l == label) {
                d.arms.push((label, target));
            }
        }
        if d.kind == StateKind::Receive && rng.gen_bool(0.15) {
            let target = rng.gen_range(0..len);
            d.arms.push((Label::Timeout, target));
            d.timeout = true;
        }
    }
}

fn assemble(seed: u64, rng: &mut ChaCha8Rng, drafts: Vec<Vec<Draft>>) -> ProcessModel {
    let n = drafts.len();
    let subjects = (0..n)
        .map(|i| SubjectDecl {
            id: subject_id(i),
            name: format!("Subject {i}"),
            role: format!("role{i}"),
            external: false,
            pool_capacity: rng.gen_range(1..=3),
        })
        .collect();
    let mut messages = Vec::new();
    for from in 0..n {
        for to in (0..n).filter(|&t| t != from) {
            for k in 0..MESSAGES_PER_PAIR {
                messages.push(MessageDecl {
                    id: message_id(from, to, k),
                    name: format!("message {from}-{to}-{k}"),
                    from: subject_id(from),
                    to: subject_id(to),
                    bo: None,
                });
            }
        }
    }
    let mut behaviors = BTreeMap::new();
    for (si, states) in drafts.into_iter().enumerate() {
        let sid = subject_id(si);
        let state_id = |i: usize| id(format!("q{i}"));
        let last = states.len() - 1;
        let mut graph = BehaviorGraph {
            subject: sid.clone(),
            states: Vec::new(),
            transitions: Vec::new(),
        };
        let mut seen: HashSet<(usize, Label)> = HashSet::new();
        for (i, d) in states.into_iter().enumerate() {
            graph.states.push(State {
                id: state_id(i),
                name: format!("state {i}"),
                kind: d.kind,
                start: i == 0,
                end: i == last,
                refinement: None,
                on_error: None,
                timeout_ms: d.timeout.then_some(50),
            });
            for (label, target) in d.arms {
                if seen.insert((i, label.clone())) {
                    graph.transitions.push(Transition {
                        from: state_id(i),
                        to: state_id(target),
                        label,
                    });
                }
            }
        }
        behaviors.insert(sid, graph);
    }
    ProcessModel {
        id: id(format!("gen{seed}")),
        name: format!("generated {seed}"),
        version: "1".into(),
        subjects,
        messages,
        bo_schemas: Vec::new(),
        behaviors,
    }
}
