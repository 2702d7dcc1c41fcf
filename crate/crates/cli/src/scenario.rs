//! Scenario scripts: per subject, the task answers to give in order.
//!
//! ```yaml
//! A:
//!   - at: prepare        # state name or id
//!     outcome: ok
//! P:
//!   - { at: produce, outcome: next, repeat: 1000 }
//!   - { at: produce, outcome: done }
//! ```

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use sbpm_core::compile::{Bundle, Selector};
use sbpm_core::model::StateKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub at: String,
    pub outcome: String,
    #[serde(default)]
    pub payload: Value,
    #[serde(default = "one")]
    pub repeat: u32,
}

fn one() -> u32 {
    1
}

pub type Scenario = BTreeMap<String, Vec<Step>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {message}")]
    Read { path: String, message: String },
    #[error("scenario names unknown subject `{0}`")]
    UnknownSubject(String),
    #[error("scenario step {index} of {subject}: no state `{at}`")]
    UnknownState { subject: String, index: usize, at: String },
    #[error("scenario step {index} of {subject}: state `{at}` does not wait for a task")]
    NotATask { subject: String, index: usize, at: String },
    #[error("scenario step {index} of {subject}: `{outcome}` is not an option in `{at}`")]
    UnknownOutcome {
        subject: String,
        index: usize,
        at: String,
        outcome: String,
    },
}

pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
    let err = |message: String| ScenarioError::Read {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    parse(&text).map_err(err)
}

/// Parses YAML (which includes JSON).
pub fn parse(text: &str) -> Result<Scenario, String> {
    let s: Option<Scenario> = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
    Ok(s.unwrap_or_default())
}

/// Checks every step against the bundle before anything runs.
pub fn check(s: &Scenario, bundle: &Bundle) -> Result<(), ScenarioError> {
    for (subject, steps) in s {
        let program = bundle
            .program(subject)
            .ok_or_else(|| ScenarioError::UnknownSubject(subject.clone()))?;
        for (index, step) in steps.iter().enumerate() {
            let st = program
                .states
                .iter()
                .find(|st| st.id.as_str() == step.at || st.name == step.at)
                .ok_or_else(|| ScenarioError::UnknownState {
                    subject: subject.clone(),
                    index,
                    at: step.at.clone(),
                })?;
            let index_of = program.index_of(&st.id).expect("own state");
            let options: Vec<String> = match st.kind {
                StateKind::Function if !program.is_end(index_of) => {
                    st.outcomes().into_iter().map(str::to_string).collect()
                }
                StateKind::Send if st.send_needs_task() => st
                    .arms
                    .iter()
                    .filter_map(|a| match &a.selector {
                        Selector::Emit { message, .. } => Some(message.to_string()),
                        _ => None,
                    })
                    .collect(),
                _ => {
                    return Err(ScenarioError::NotATask {
                        subject: subject.clone(),
                        index,
                        at: step.at.clone(),
                    })
                }
            };
            if !options.contains(&step.outcome) {
                return Err(ScenarioError::UnknownOutcome {
                    subject: subject.clone(),
                    index,
                    at: step.at.clone(),
                    outcome: step.outcome.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Remaining answers per subject.
#[derive(Debug, Clone)]
pub struct Script {
    queues: BTreeMap<String, VecDeque<Step>>,
}

impl Script {
    pub fn new(s: &Scenario) -> Self {
        Script {
            queues: s
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().filter(|st| st.repeat > 0).cloned().collect()))
                .collect(),
        }
    }

    /// The answer for `subject` waiting in the state with this id and name.
    pub fn next_for(&self, subject: &str, state_id: &str, state_name: &str) -> Option<&Step> {
        let step = self.queues.get(subject)?.front()?;
        (step.at == state_id || step.at == state_name).then_some(step)
    }

    /// Uses up one repetition of the front step of `subject`.
    pub fn consume(&mut self, subject: &str) {
        if let Some(q) = self.queues.get_mut(subject) {
            if let Some(front) = q.front_mut() {
                front.repeat -= 1;
                if front.repeat == 0 {
                    q.pop_front();
                }
            }
        }
    }

    pub fn remaining(&self) -> usize {
        self.queues.values().flatten().map(|s| s.repeat as usize).sum()
    }
}

/// Parses `refinement=outcome`.
pub fn parse_stub(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((r, o)) if !r.is_empty() && !o.is_empty() => Ok((r.to_string(), o.to_string())),
        _ => Err(format!("expected refinement=outcome, got `{s}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeat_is_consumed_one_at_a_time() {
        let s = parse("P:\n  - { at: produce, outcome: next, repeat: 2 }\n  - { at: p0, outcome: done }\n").unwrap();
        let mut script = Script::new(&s);
        assert_eq!(script.remaining(), 3);
        for _ in 0..2 {
            assert_eq!(script.next_for("P", "p0", "produce").unwrap().outcome, "next");
            script.consume("P");
        }
        assert_eq!(script.next_for("P", "p0", "produce").unwrap().outcome, "done");
        assert!(script.next_for("P", "p1", "send item").is_none());
        script.consume("P");
        assert_eq!(script.remaining(), 0);
        assert!(script.next_for("P", "p0", "produce").is_none());
    }

    #[test]
    fn json_and_empty_documents() {
        let s = parse(r#"{"A": [{"at": "s0", "outcome": "ok", "payload": {"n": 1}}]}"#).unwrap();
        assert_eq!(s["A"][0].payload["n"], 1);
        assert_eq!(s["A"][0].repeat, 1);
        assert!(parse("").unwrap().is_empty());
        assert!(parse("A: [{at: s0}]").is_err());
        assert!(parse("A: [{at: s0, outcome: ok, extra: 1}]").is_err());
    }

    #[test]
    fn stub_arguments() {
        assert_eq!(parse_stub("credit-check=accept").unwrap(), ("credit-check".into(), "accept".into()));
        assert!(parse_stub("credit-check").is_err());
        assert!(parse_stub("=accept").is_err());
    }
}
