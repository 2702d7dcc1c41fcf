#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;
use sbpm_core::compile::{link_bundle, Bundle, SupervisorConfig};
use sbpm_core::Ident;
use sbpm_runtime::{Envelope, EventRecord, Frame, Hooks, InstanceMeta, InstanceState};
use sbpm_testkit::fixture;
use uuid::Uuid;

pub fn bundle_with(name: &str, template: &SupervisorConfig) -> Arc<Bundle> {
    Arc::new(link_bundle(&fixture(name), template).unwrap())
}

pub fn bundle(name: &str) -> Arc<Bundle> {
    bundle_with(name, &SupervisorConfig::default())
}

pub fn meta(b: &Bundle) -> InstanceMeta {
    InstanceMeta {
        instance_id: Uuid::from_u128(0x1234),
        bundle_hash: b.hash().to_string(),
        bindings: b.roles().into_iter().map(|r| (r.to_string(), format!("{r}-agent"))).collect(),
        placement: BTreeMap::new(),
        coordinator: "n1".into(),
        routes: BTreeMap::new(),
    }
}

pub fn id(s: &str) -> Ident {
    s.parse().unwrap()
}

/// Hooks that remember everything the host asks for.
#[derive(Default)]
pub struct Recorder {
    pub clock: Mutex<u64>,
    pub snapshots: Mutex<Vec<InstanceState>>,
    pub timers: Mutex<Vec<(Ident, u64, u64)>>,
    pub frames: Mutex<Vec<(String, Frame)>>,
    pub external: Mutex<Vec<(String, Envelope)>>,
}

impl Hooks for Recorder {
    fn now_ms(&self) -> u64 {
        let mut c = self.clock.lock();
        *c += 1;
        *c
    }

    fn persist(&self, state: &InstanceState, _rec: &EventRecord) {
        self.snapshots.lock().push(state.clone());
    }

    fn send_frame(&self, node: &str, frame: Frame) {
        self.frames.lock().push((node.to_string(), frame));
    }

    fn arm_timer(&self, _instance: Uuid, subject: &Ident, epoch: u64, ms: u64) {
        self.timers.lock().push((subject.clone(), epoch, ms));
    }

    fn route_external(&self, route: &str, env: &Envelope) -> Result<(), String> {
        self.external.lock().push((route.to_string(), env.clone()));
        Ok(())
    }
}

/// (subject, state id) for every STATE_ENTERED in `log`.
pub fn state_trace(log: &[EventRecord]) -> Vec<(String, String)> {
    log.iter()
        .filter_map(|r| match &r.event {
            sbpm_runtime::Event::StateEntered { state, .. } => Some((r.subject.clone(), state.to_string())),
            _ => None,
        })
        .collect()
}
