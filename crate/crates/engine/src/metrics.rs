//! Service-level figures computed from an event log alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use sbpm_core::compile::Bundle;
use sbpm_runtime::actor::ActorStatus;
use sbpm_runtime::{Event, EventRecord, InstanceMeta, InstanceState};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    /// From the first STATE_ENTERED to INSTANCE_COMPLETED (or the failing
    /// record); absent while the instance runs.
    pub duration_ms: Option<u64>,
    /// Time each subject spent awaiting a task or a message, up to the last
    /// record.
    pub wait_ms: BTreeMap<String, u64>,
    pub events: usize,
}

fn waiting(s: ActorStatus) -> bool {
    matches!(s, ActorStatus::AwaitingTask | ActorStatus::AwaitingMessage)
}

pub fn compute(log: &[EventRecord], bundle: &Bundle, meta: &InstanceMeta) -> Metrics {
    let mut state = InstanceState::new(meta.clone(), bundle);
    let mut since: BTreeMap<String, u64> = BTreeMap::new();
    let mut wait: BTreeMap<String, u64> = state.actors.keys().map(|s| (s.to_string(), 0)).collect();
    let mut first = None;
    let mut end = None;
    for rec in log {
        state.apply_event(bundle, &rec.subject, &rec.event);
        if first.is_none() && matches!(rec.event, Event::StateEntered { .. }) {
            first = Some(rec.ts);
        }
        for (s, a) in &state.actors {
            let key = s.to_string();
            match (waiting(a.status), since.contains_key(&key)) {
                (true, false) => {
                    since.insert(key, rec.ts);
                }
                (false, true) => {
                    let t0 = since.remove(&key).expect("checked");
                    *wait.get_mut(&key).expect("every actor") += rec.ts.saturating_sub(t0);
                }
                _ => {}
            }
        }
        if state.status != sbpm_runtime::InstanceStatus::Running && end.is_none() {
            end = Some(rec.ts);
        }
    }
    let last = log.last().map_or(0, |r| r.ts);
    for (s, t0) in since {
        *wait.get_mut(&s).expect("every actor") += last.saturating_sub(t0);
    }
    Metrics {
        duration_ms: match (first, end) {
            (Some(a), Some(b)) => Some(b.saturating_sub(a)),
            _ => None,
        },
        wait_ms: wait,
        events: log.len(),
    }
}
