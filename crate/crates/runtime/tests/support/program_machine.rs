use sbpm_core::compile::Bundle;
use sbpm_core::model::ProcessModel;
use sbpm_runtime::actor::{actor_step, ActorState, ActorStatus, Cx, Input};
use sbpm_runtime::{correlation_id, Envelope};
use sbpm_testkit::interp::{payload_for, Machine, Stimulus};
use serde_json::Value;
use uuid::Uuid;

/// A compiled subject program driven through the runtime step function.
pub struct ProgramMachine<'a> {
    pub model: &'a ProcessModel,
    pub bundle: &'a Bundle,
    pub actor: ActorState,
    arrivals: u64,
}

impl<'a> ProgramMachine<'a> {
    pub fn new(model: &'a ProcessModel, bundle: &'a Bundle, subject: &str) -> Self {
        let mut m = ProgramMachine {
            model,
            bundle,
            actor: ActorState::new(bundle.program(subject).expect("internal subject")),
            arrivals: 0,
        };
        m.step(Input::MessageAvailable);
        m
    }

    fn cx(&self) -> Cx<'a> {
        Cx {
            instance_id: Uuid::nil(),
            bundle: self.bundle,
        }
    }

    fn step(&mut self, input: Input) {
        if let Ok((next, _)) = actor_step(&self.actor, &self.cx(), input) {
            self.actor = next;
        }
    }

    fn task(&mut self, outcome: &str, payload: Value) {
        self.step(Input::TaskCompleted {
            outcome: outcome.to_string(),
            payload,
            agent: None,
        });
    }
}

impl Machine for ProgramMachine<'_> {
    fn feed(&mut self, s: &Stimulus) {
        let program = self.bundle.program(&self.actor.subject).unwrap();
        let kind = program.state(self.actor.current).kind;
        match s {
            Stimulus::Outcome(o) => {
                if kind == sbpm_core::model::StateKind::Function {
                    self.task(o, Value::Null)
                }
            }
            Stimulus::Send(_) if kind != sbpm_core::model::StateKind::Send => {}
            Stimulus::Send(m) => {
                if self.actor.status == ActorStatus::AwaitingTask {
                    let payload = payload_for(self.model, m);
                    self.task(m, payload);
                }
                let matches = self
                    .actor
                    .outbox
                    .as_ref()
                    .is_some_and(|o| o.envelope.message_id.as_str() == m);
                if matches {
                    self.step(Input::SendAck);
                }
            }
            Stimulus::Arrive { message, from } => {
                let seq = self.arrivals;
                self.arrivals += 1;
                self.actor.pool.push_back(Envelope {
                    instance_id: Uuid::nil(),
                    from_subject: from.parse().unwrap(),
                    to_subject: self.actor.subject.clone(),
                    message_id: message.parse().unwrap(),
                    correlation_id: correlation_id(Uuid::nil(), from, seq),
                    seq,
                    payload: payload_for(self.model, message),
                });
                self.step(Input::MessageAvailable);
                self.actor.pool.clear();
            }
            Stimulus::Timeout => {
                let epoch = self.actor.entries;
                self.step(Input::TimeoutElapsed { epoch });
            }
        }
    }

    fn state_id(&self) -> String {
        let program = self.bundle.program(&self.actor.subject).unwrap();
        program.state(self.actor.current).id.to_string()
    }
}
