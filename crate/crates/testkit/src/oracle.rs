//! Brute-force reference explorer for interaction soundness.
//!
//! Deliberately naive: global states are maps keyed by subject id strings,
//! the whole reachable set is enumerated (no early exit), and transitions are
//! read straight from the behavior graphs.

use std::collections::{BTreeMap, HashSet, VecDeque};

use sbpm_core::model::{Label, ProcessModel, StateKind};

/// Location and pool (message id, sender id) per subject id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OracleState {
    pub locations: BTreeMap<String, String>,
    pub pools: BTreeMap<String, Vec<(String, String)>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResult {
    pub reachable: usize,
    pub deadlocks: Vec<OracleState>,
}

impl OracleResult {
    pub fn sound(&self) -> bool {
        self.deadlocks.is_empty()
    }
}

/// A step label in the oracle's own vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleStep {
    Send { subject: String, message: String, to: String },
    Consume { subject: String, message: String, from: String },
    Choose { subject: String, outcome: String },
    Timeout { subject: String },
}

pub fn initial(m: &ProcessModel) -> OracleState {
    let mut s = OracleState {
        locations: BTreeMap::new(),
        pools: BTreeMap::new(),
    };
    for (subject, g) in &m.behaviors {
        let start = g.states.iter().find(|st| st.start).expect("start state");
        s.locations.insert(subject.to_string(), start.id.to_string());
        s.pools.insert(subject.to_string(), Vec::new());
    }
    s
}

fn is_end(m: &ProcessModel, subject: &str, state: &str) -> bool {
    m.behaviors[subject].state(state).map(|s| s.end).unwrap_or(false)
}

fn bound(m: &ProcessModel, subject: &str, pool_bound: u32) -> usize {
    let cap = m.subject(subject).expect("declared").pool_capacity;
    pool_bound.min(cap) as usize
}

/// All enabled steps from `s` with their successor states.
pub fn steps(m: &ProcessModel, s: &OracleState, pool_bound: u32) -> Vec<(OracleStep, OracleState)> {
    let mut out = Vec::new();
    for (subject, here) in &s.locations {
        let g = &m.behaviors[subject.as_str()];
        let st = g.state(here).expect("state exists");
        if st.end {
            continue;
        }
        let arms: Vec<_> = g.transitions.iter().filter(|t| t.from.as_str() == here.as_str()).collect();
        match st.kind {
            StateKind::Function | StateKind::Send => {
                for t in arms {
                    let mut next = s.clone();
                    next.locations.insert(subject.clone(), t.to.to_string());
                    let step = match &t.label {
                        Label::Outcome { name } => OracleStep::Choose {
                            subject: subject.clone(),
                            outcome: name.clone(),
                        },
                        Label::Send { message, to } => {
                            let pool = next.pools.get_mut(to.as_str()).expect("pool");
                            if pool.len() >= bound(m, to, pool_bound) {
                                continue;
                            }
                            pool.push((message.to_string(), subject.clone()));
                            OracleStep::Send {
                                subject: subject.clone(),
                                message: message.to_string(),
                                to: to.to_string(),
                            }
                        }
                        _ => unreachable!("label kind follows state kind"),
                    };
                    out.push((step, next));
                }
            }
            StateKind::Receive => {
                // Oldest pool entry that any arm accepts; that entry's first arm.
                let pool = &s.pools[subject];
                'entries: for (pos, (msg, from)) in pool.iter().enumerate() {
                    for t in &arms {
                        if let Label::Receive { message, from: f } = &t.label {
                            if message.as_str() == msg && f.as_str() == from {
                                let mut next = s.clone();
                                next.pools.get_mut(subject).expect("pool").remove(pos);
                                next.locations.insert(subject.clone(), t.to.to_string());
                                out.push((
                                    OracleStep::Consume {
                                        subject: subject.clone(),
                                        message: msg.clone(),
                                        from: from.clone(),
                                    },
                                    next,
                                ));
                                break 'entries;
                            }
                        }
                    }
                }
                if let Some(t) = arms.iter().find(|t| t.label == Label::Timeout) {
                    let mut next = s.clone();
                    next.locations.insert(subject.clone(), t.to.to_string());
                    out.push((OracleStep::Timeout { subject: subject.clone() }, next));
                }
            }
        }
    }
    out
}

fn all_ended(m: &ProcessModel, s: &OracleState) -> bool {
    s.locations.iter().all(|(subj, st)| is_end(m, subj, st))
}

/// Enumerates every reachable global state and collects the deadlocked ones.
pub fn explore(m: &ProcessModel, pool_bound: u32) -> OracleResult {
    let start = initial(m);
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    let mut deadlocks = Vec::new();
    seen.insert(start.clone());
    queue.push_back(start);
    while let Some(s) = queue.pop_front() {
        let next = steps(m, &s, pool_bound);
        if next.is_empty() && !all_ended(m, &s) {
            deadlocks.push(s.clone());
        }
        for (_, n) in next {
            if seen.insert(n.clone()) {
                queue.push_back(n);
            }
        }
    }
    deadlocks.sort();
    OracleResult {
        reachable: seen.len(),
        deadlocks,
    }
}

/// Applies `path` from the initial state, requiring each step to be enabled.
pub fn replay(m: &ProcessModel, pool_bound: u32, path: &[OracleStep]) -> Result<OracleState, String> {
    let mut s = initial(m);
    for (i, want) in path.iter().enumerate() {
        s = steps(m, &s, pool_bound)
            .into_iter()
            .find(|(step, _)| step == want)
            .map(|(_, n)| n)
            .ok_or_else(|| format!("step {i} ({want:?}) is not enabled"))?;
    }
    Ok(s)
}

/// True when no step is enabled and some subject is short of an end state.
pub fn is_deadlock(m: &ProcessModel, s: &OracleState, pool_bound: u32) -> bool {
    steps(m, s, pool_bound).is_empty() && !all_ended(m, s)
}
