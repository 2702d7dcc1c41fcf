//! Direct interpreter over a subject behavior diagram, the reference side of
//! the compiled-program bisimulation.

use rand::seq::SliceRandom;
use rand::Rng;
use sbpm_core::model::{BehaviorGraph, BoField, BoSchema, FieldType, Label, ProcessModel, StateKind};
use serde_json::{Map, Value};

/// One thing that can happen to a single subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stimulus {
    /// A task completion naming this outcome.
    Outcome(String),
    /// In a send state: choose `message` and have it accepted.
    Send(String),
    /// `message` from `from` arrives.
    Arrive { message: String, from: String },
    Timeout,
}

/// Something that follows a behavior when fed stimuli.
pub trait Machine {
    fn feed(&mut self, s: &Stimulus);
    /// Id of the state the machine is in.
    fn state_id(&self) -> String;
}

pub struct GraphRunner<'a> {
    graph: &'a BehaviorGraph,
    current: String,
}

impl<'a> GraphRunner<'a> {
    pub fn new(graph: &'a BehaviorGraph) -> Self {
        let start = graph.states.iter().find(|s| s.start).expect("start state");
        GraphRunner {
            graph,
            current: start.id.to_string(),
        }
    }
}

impl Machine for GraphRunner<'_> {
    fn feed(&mut self, s: &Stimulus) {
        let state = self.graph.states.iter().find(|st| st.id.as_str() == self.current).unwrap();
        if state.end {
            return;
        }
        let next = self
            .graph
            .transitions
            .iter()
            .filter(|t| t.from.as_str() == self.current)
            .find(|t| match (&t.label, s) {
                (Label::Outcome { name }, Stimulus::Outcome(o)) => state.kind == StateKind::Function && name == o,
                (Label::Send { message, .. }, Stimulus::Send(m)) => message.as_str() == m,
                (Label::Receive { message, from }, Stimulus::Arrive { message: m, from: f }) => {
                    message.as_str() == m && from.as_str() == f
                }
                (Label::Timeout, Stimulus::Timeout) => true,
                _ => false,
            });
        if let Some(t) = next {
            self.current = t.to.to_string();
        }
    }

    fn state_id(&self) -> String {
        self.current.clone()
    }
}

/// Every stimulus named anywhere in `graph`, plus an outcome no state
/// declares.
pub fn alphabet(graph: &BehaviorGraph) -> Vec<Stimulus> {
    let mut out: Vec<Stimulus> = graph
        .transitions
        .iter()
        .map(|t| match &t.label {
            Label::Outcome { name } => Stimulus::Outcome(name.clone()),
            Label::Send { message, .. } => Stimulus::Send(message.to_string()),
            Label::Receive { message, from } => Stimulus::Arrive {
                message: message.to_string(),
                from: from.to_string(),
            },
            Label::Timeout => Stimulus::Timeout,
        })
        .collect();
    out.push(Stimulus::Outcome("undeclared-outcome".into()));
    out.push(Stimulus::Timeout);
    out.sort_by_key(|s| format!("{s:?}"));
    out.dedup();
    out
}

pub fn random_stimuli(alphabet: &[Stimulus], rng: &mut impl Rng, len: usize) -> Vec<Stimulus> {
    (0..len).map(|_| alphabet.choose(rng).expect("non-empty alphabet").clone()).collect()
}

/// A payload that satisfies `schema`, with every optional field present.
pub fn sample_payload(schema: &BoSchema) -> Value {
    fields(&schema.fields)
}

fn fields(fs: &[BoField]) -> Value {
    let mut m = Map::new();
    for f in fs {
        m.insert(f.name.clone(), sample(f));
    }
    Value::Object(m)
}

fn sample(f: &BoField) -> Value {
    match f.ty {
        FieldType::String => Value::String("x".into()),
        FieldType::Number => Value::from(1),
        FieldType::Boolean => Value::Bool(true),
        FieldType::Record => fields(&f.children),
        FieldType::List => Value::Array(vec![fields(&f.children)]),
    }
}

/// Payload for `message` in `m`: null without a business object.
pub fn payload_for(m: &ProcessModel, message: &str) -> Value {
    m.message(message)
        .and_then(|d| d.bo.as_ref())
        .and_then(|bo| m.bo_schema(bo))
        .map_or(Value::Null, sample_payload)
}
