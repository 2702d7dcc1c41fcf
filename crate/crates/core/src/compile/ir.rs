use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::CompileError;
use crate::model::{Label, ProcessModel, StateKind};
use crate::Ident;

/// Executable form of one subject behavior. State `i` is the `(i+1)`-th
/// state element of the behavior file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectProgram {
    pub subject: Ident,
    pub states: Vec<IrState>,
    pub start_index: usize,
    pub end_indices: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrState {
    pub id: Ident,
    pub name: String,
    pub kind: StateKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    /// Document order, except that a timeout arm always comes last.
    pub arms: Vec<IrArm>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrArm {
    pub selector: Selector,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Selector {
    Outcome {
        name: String,
    },
    Emit {
        message: Ident,
        to: Ident,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bo: Option<Ident>,
    },
    Match {
        message: Ident,
        from: Ident,
    },
    Timeout,
}

impl SubjectProgram {
    pub fn state(&self, index: usize) -> &IrState {
        &self.states[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.states.iter().position(|s| s.id == id)
    }

    pub fn is_end(&self, index: usize) -> bool {
        self.end_indices.contains(&index)
    }
}

impl IrState {
    /// First arm choosing `outcome`.
    pub fn outcome_arm(&self, outcome: &str) -> Option<&IrArm> {
        self.arms
            .iter()
            .find(|a| matches!(&a.selector, Selector::Outcome { name } if name == outcome))
    }

    /// First arm emitting `message`.
    pub fn emit_arm(&self, message: &str) -> Option<&IrArm> {
        self.arms
            .iter()
            .find(|a| matches!(&a.selector, Selector::Emit { message: m, .. } if m == message))
    }

    /// First arm accepting `message` from `from`, in document order.
    pub fn match_arm(&self, message: &str, from: &str) -> Option<&IrArm> {
        self.arms.iter().find(
            |a| matches!(&a.selector, Selector::Match { message: m, from: f } if m == message && f == from),
        )
    }

    pub fn timeout_arm(&self) -> Option<&IrArm> {
        self.arms.iter().find(|a| a.selector == Selector::Timeout)
    }

    pub fn outcomes(&self) -> Vec<&str> {
        self.arms
            .iter()
            .filter_map(|a| match &a.selector {
                Selector::Outcome { name } => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// A send state runs without an agent only when it has a single arm whose
    /// message carries no business object.
    pub fn send_needs_task(&self) -> bool {
        self.kind == StateKind::Send
            && (self.arms.len() != 1 || matches!(&self.arms[0].selector, Selector::Emit { bo: Some(_), .. }))
    }
}

pub fn compile_subject(m: &ProcessModel, subject: &str) -> Result<SubjectProgram, CompileError> {
    let decl = m
        .subject(subject)
        .ok_or_else(|| CompileError::UnknownSubject(subject.to_string()))?;
    if decl.external {
        return Err(CompileError::ExternalSubjectHasNoBehavior(subject.to_string()));
    }
    let graph = m
        .behavior(subject)
        .ok_or_else(|| CompileError::UnknownSubject(subject.to_string()))?;
    let index = |id: &str| graph.state_index(id).expect("parser resolves transition endpoints");

    let states = graph
        .states
        .iter()
        .map(|s| {
            let mut arms = Vec::new();
            let mut timeout = None;
            for t in graph.outgoing(&s.id) {
                let target = index(&t.to);
                let selector = match &t.label {
                    Label::Outcome { name } => Selector::Outcome { name: name.clone() },
                    Label::Send { message, to } => Selector::Emit {
                        message: message.clone(),
                        to: to.clone(),
                        bo: m.message(message).and_then(|d| d.bo.clone()),
                    },
                    Label::Receive { message, from } => Selector::Match {
                        message: message.clone(),
                        from: from.clone(),
                    },
                    Label::Timeout => {
                        timeout = Some(IrArm {
                            selector: Selector::Timeout,
                            target,
                        });
                        continue;
                    }
                };
                arms.push(IrArm { selector, target });
            }
            arms.extend(timeout);
            IrState {
                id: s.id.clone(),
                name: s.name.clone(),
                kind: s.kind,
                refinement: s.refinement.clone(),
                on_error: s.on_error.clone(),
                timeout_ms: s.timeout_ms,
                arms,
            }
        })
        .collect();

    Ok(SubjectProgram {
        subject: decl.id.clone(),
        states,
        start_index: graph.states.iter().position(|s| s.start).expect("parser requires a start state"),
        end_indices: graph
            .states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.end)
            .map(|(i, _)| i)
            .collect(),
    })
}
